//! Reference systems and the integrators that generate data from them.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};

/// `ẋ_k = (x_{k+1} − x_{k−2}) x_{k−1} − x_k + F` with cyclic indices.
pub fn lorenz96_rhs(x: &[f64], forcing: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    lorenz96_into(x, forcing, &mut out)?;
    Ok(out)
}

fn lorenz96_into(x: &[f64], forcing: f64, out: &mut [f64]) -> Result<()> {
    let d = x.len();
    if d < 4 {
        return Err(Error::InvalidInput(format!("Lorenz-96 needs at least 4 coordinates, got {d}")));
    }
    for k in 0..d {
        let next = x[(k + 1) % d];
        let prev = x[(k + d - 1) % d];
        let prev2 = x[(k + d - 2) % d];
        out[k] = (next - prev2) * prev - x[k] + forcing;
    }
    Ok(())
}

/// Where `α` enters the first Chua equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChuaForm {
    /// `ẋ₁ = αx₂ − μ₀x₁ − (μ₁/3)x₁³`. With the default parameters both
    /// nontrivial equilibria are stable and the only other attractor is a
    /// large cycle.
    #[default]
    Plain,
    /// `ẋ₁ = α(x₂ − μ₀x₁ − (μ₁/3)x₁³)`, which has a double-scroll attractor
    /// inside the large cycle.
    Bracketed,
}

/// Parameters of the cubic Chua circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChuaParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub form: ChuaForm,
}

impl Default for ChuaParams {
    fn default() -> Self {
        Self { alpha: 18.0, beta: 33.0, mu0: -0.2, mu1: 0.01, form: ChuaForm::Plain }
    }
}

pub fn chua_rhs(x: &[f64; 3], p: &ChuaParams) -> [f64; 3] {
    let damping = -p.mu0 * x[0] - (p.mu1 / 3.0) * x[0].powi(3);
    let first = match p.form {
        ChuaForm::Plain => p.alpha * x[1] + damping,
        ChuaForm::Bracketed => p.alpha * (x[1] + damping),
    };
    [
        first,
        x[0] - x[1] + x[2],
        -p.beta * x[1],
    ]
}

/// Right-hand side of an ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rhs {
    Lorenz96 { forcing: f64 },
    Chua(ChuaParams),
    /// `ẋ = rate·x` in every coordinate.
    Linear { rate: f64 },
}

impl Rhs {
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Rhs::Lorenz96 { forcing } => lorenz96_into(x, *forcing, out),
            Rhs::Chua(p) => {
                if x.len() != 3 {
                    return Err(Error::Dimension(format!("Chua system is 3-dimensional, state has {}", x.len())));
                }
                out.copy_from_slice(&chua_rhs(&[x[0], x[1], x[2]], p));
                Ok(())
            }
            Rhs::Linear { rate } => {
                out.iter_mut().zip(x).for_each(|(o, v)| *o = rate * v);
                Ok(())
            }
        }
    }
}

/// A fixed-step initial value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSpec {
    pub rhs: Rhs,
    pub initial: Vec<f64>,
    pub step: f64,
    pub steps: usize,
    /// Rows to keep (0-based); all when `None`.
    pub observe: Option<Vec<usize>>,
}

impl OdeSpec {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidInput(format!("step size must be positive, got {}", self.step)));
        }
        if self.initial.is_empty() {
            return Err(Error::InvalidInput("empty initial state".into()));
        }
        if let Rhs::Chua(_) = self.rhs {
            if self.initial.len() != 3 {
                return Err(Error::Dimension(format!("Chua system is 3-dimensional, state has {}", self.initial.len())));
            }
        }
        if let Rhs::Lorenz96 { .. } = self.rhs {
            if self.initial.len() < 4 {
                return Err(Error::InvalidInput("Lorenz-96 needs at least 4 coordinates".into()));
            }
        }
        Ok(())
    }
}

struct Rk4 {
    rhs: Rhs,
    h: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(rhs: Rhs, h: f64, d: usize) -> Self {
        Self { rhs, h, k1: vec![0.0; d], k2: vec![0.0; d], k3: vec![0.0; d], k4: vec![0.0; d], tmp: vec![0.0; d] }
    }

    fn step(&mut self, x: &mut [f64]) -> Result<()> {
        let h = self.h;
        self.rhs.eval(x, &mut self.k1)?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        self.rhs.eval(&self.tmp, &mut self.k2)?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        self.rhs.eval(&self.tmp, &mut self.k3)?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        self.rhs.eval(&self.tmp, &mut self.k4)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta; returns the observed rows of the
/// `D × (steps + 1)` trajectory, initial state included.
pub fn integrate_rk4(spec: &OdeSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let d = spec.initial.len();
    let rows: Vec<usize> = match &spec.observe {
        Some(r) => r.clone(),
        None => (0..d).collect(),
    };
    if rows.is_empty() || rows.iter().any(|&r| r >= d) {
        return Err(Error::Dimension(format!("observable {rows:?} out of range for dimension {d}")));
    }
    let mut out = DMatrix::zeros(rows.len(), spec.steps + 1);
    let mut x = spec.initial.clone();
    let mut rk = Rk4::new(spec.rhs, spec.step, d);
    for t in 0..=spec.steps {
        if t > 0 {
            rk.step(&mut x)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { step: t });
            }
        }
        for (i, &r) in rows.iter().enumerate() {
            out[(i, t)] = x[r];
        }
    }
    Ok(out)
}

/// Largest Lyapunov exponent (per unit time) from the separation of two
/// nearby trajectories, renormalized every `renorm_every` steps.
pub fn max_lyapunov(rhs: Rhs, initial: &[f64], step: f64, steps: usize, renorm_every: usize, offset: f64) -> Result<f64> {
    OdeSpec { rhs, initial: initial.to_vec(), step, steps, observe: None }.validate()?;
    if renorm_every == 0 || steps < renorm_every || !(offset > 0.0) {
        return Err(Error::InvalidInput("need a positive offset and at least one renormalization interval".into()));
    }
    let d = initial.len();
    let mut a = initial.to_vec();
    let mut b = initial.to_vec();
    b[0] += offset;
    let mut rk = Rk4::new(rhs, step, d);
    let mut log_sum = 0.0;
    let intervals = steps / renorm_every;
    for i in 0..intervals {
        for _ in 0..renorm_every {
            rk.step(&mut a)?;
            rk.step(&mut b)?;
        }
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if !dist.is_finite() || dist == 0.0 {
            return Err(Error::Diverged { step: (i + 1) * renorm_every });
        }
        log_sum += (dist / offset).ln();
        for j in 0..d {
            b[j] = a[j] + (b[j] - a[j]) * offset / dist;
        }
    }
    Ok(log_sum / (intervals * renorm_every) as f64 / step)
}

/// Keeps the given rows (0-based) of a trajectory.
pub fn select_observable(data: &DMatrix<f64>, coords: &[usize]) -> Result<DMatrix<f64>> {
    if coords.is_empty() {
        return Err(Error::InvalidInput("empty observable".into()));
    }
    if let Some(&c) = coords.iter().find(|&&c| c >= data.nrows()) {
        return Err(Error::Dimension(format!("coordinate {c} out of range for {} rows", data.nrows())));
    }
    Ok(data.select_rows(coords))
}

/// A Kuramoto–Sivashinsky run `u_t + 4u_xxxx + 16u_xx + 8(u²)_x = 0` on the
/// periodic domain `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KsSpec {
    pub grid_points: usize,
    pub step: f64,
    pub steps: usize,
    /// Values at `x_j = 2πj/N`.
    pub initial: Vec<f64>,
}

impl KsSpec {
    /// `u₀(x) = 10⁻⁴ cos x (1 + sin x)` on `n` points.
    pub fn standard_profile(n: usize) -> Vec<f64> {
        grid(n).map(|x| 1e-4 * x.cos() * (1.0 + x.sin())).collect()
    }

    pub fn standard(steps: usize) -> Self {
        Self { grid_points: 100, step: 1e-3, steps, initial: Self::standard_profile(100) }
    }
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| 2.0 * std::f64::consts::PI * j as f64 / n as f64)
}

/// Output of [`ks_run`].
#[derive(Debug, Clone)]
pub struct KsRun {
    /// `N × (steps + 1)` grid values.
    pub data: DMatrix<f64>,
    /// Largest imaginary part met after an inverse transform.
    pub max_imag_residue: f64,
}

struct KsOperator {
    n: usize,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    /// `−8ik`, zero on the dealiased band.
    g: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    max_imag: f64,
}

impl KsOperator {
    fn new(n: usize, h: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let wavenumber = |j: usize| if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let contour = 32;
        let roots: Vec<Complex64> = (1..=contour)
            .map(|j| Complex64::from_polar(1.0, std::f64::consts::PI * (j as f64 - 0.5) / (contour as f64 / 2.0)))
            .collect();
        let (mut e, mut e2, mut q, mut f1, mut f2, mut f3) = (vec![], vec![], vec![], vec![], vec![], vec![]);
        let mut g = Vec::with_capacity(n);
        for j in 0..n {
            let k = wavenumber(j);
            let l = 16.0 * k * k - 4.0 * k.powi(4);
            e.push((h * l).exp());
            e2.push((h * l / 2.0).exp());
            let mean = |f: &dyn Fn(Complex64) -> Complex64| {
                roots.iter().map(|&r| f(h * l + r)).sum::<Complex64>().re / contour as f64
            };
            q.push(h * mean(&|z| ((z / 2.0).exp() - 1.0) / z));
            f1.push(h * mean(&|z| (-4.0 - z + z.exp() * (4.0 - 3.0 * z + z * z)) / z.powi(3)));
            f2.push(h * mean(&|z| (2.0 + z + z.exp() * (z - 2.0)) / z.powi(3)));
            f3.push(h * mean(&|z| (-4.0 - 3.0 * z - z * z + z.exp() * (4.0 - z)) / z.powi(3)));
            let keep = k.abs() < n as f64 / 3.0 && !(n.is_multiple_of(2) && j == n / 2);
            g.push(if keep { Complex64::new(0.0, -8.0 * k) } else { Complex64::new(0.0, 0.0) });
        }
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            n,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            g,
            fwd,
            inv,
            buf: vec![Complex64::new(0.0, 0.0); n],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            max_imag: 0.0,
        }
    }

    fn to_grid(&mut self, v: &[Complex64]) -> &[Complex64] {
        self.buf.copy_from_slice(v);
        self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for z in self.buf.iter_mut() {
            *z *= scale;
            self.max_imag = self.max_imag.max(z.im.abs());
        }
        &self.buf
    }

    /// `−8ik · F(u²)` for the field with spectrum `v`.
    fn nonlinear(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        self.to_grid(v);
        for z in self.buf.iter_mut() {
            *z = Complex64::new(z.re * z.re, 0.0);
        }
        self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
        for j in 0..self.n {
            out[j] = self.g[j] * self.buf[j];
        }
    }
}

/// ETDRK4 integration of the Kuramoto–Sivashinsky equation.
pub fn ks_run(spec: &KsSpec) -> Result<KsRun> {
    let n = spec.grid_points;
    if n < 4 {
        return Err(Error::InvalidInput(format!("need at least 4 grid points, got {n}")));
    }
    if spec.initial.len() != n {
        return Err(Error::Dimension(format!("initial profile has {} values for {n} points", spec.initial.len())));
    }
    if !(spec.step > 0.0) || !spec.step.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {}", spec.step)));
    }
    let mut op = KsOperator::new(n, spec.step);
    let mut v: Vec<Complex64> = spec.initial.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    op.fwd.process(&mut v);
    let zero = Complex64::new(0.0, 0.0);
    let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let (mut a, mut b, mut c) = (vec![zero; n], vec![zero; n], vec![zero; n]);

    let mut data = DMatrix::zeros(n, spec.steps + 1);
    data.column_mut(0).copy_from_slice(&spec.initial);
    for step in 1..=spec.steps {
        op.nonlinear(&v, &mut nv);
        for j in 0..n {
            a[j] = op.e2[j] * v[j] + op.q[j] * nv[j];
        }
        op.nonlinear(&a, &mut na);
        for j in 0..n {
            b[j] = op.e2[j] * v[j] + op.q[j] * na[j];
        }
        op.nonlinear(&b, &mut nb);
        for j in 0..n {
            c[j] = op.e2[j] * a[j] + op.q[j] * (2.0 * nb[j] - nv[j]);
        }
        op.nonlinear(&c, &mut nc);
        for j in 0..n {
            v[j] = op.e[j] * v[j] + nv[j] * op.f1[j] + 2.0 * (na[j] + nb[j]) * op.f2[j] + nc[j] * op.f3[j];
        }
        let u = op.to_grid(&v);
        if u.iter().any(|z| !z.re.is_finite()) {
            return Err(Error::Diverged { step });
        }
        for (j, z) in u.iter().enumerate() {
            data[(j, step)] = z.re;
        }
    }
    Ok(KsRun { data, max_imag_residue: op.max_imag })
}

pub fn integrate_ks_etdrk4(spec: &KsSpec) -> Result<DMatrix<f64>> {
    ks_run(spec).map(|r| r.data)
}
