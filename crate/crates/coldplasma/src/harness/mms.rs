//! Manufactured solution for the convergence study: closed-form fields on
//! [-1,1]^3 whose boundary traces satisfy the homogeneous constraints, plus
//! the source terms that make them exact solutions of the forced system.

use std::f64::consts::PI;

use crate::integrators::{SourceTerms, SourceValues};
use crate::semidiscrete::PhysConstants;
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct MmsSolution {
    pub constants: PhysConstants,
}

/// Pointwise values of all four fields.
#[derive(Debug, Clone, Copy)]
pub struct MmsFields {
    pub e: Vec3,
    pub b: Vec3,
    pub rho: f64,
    pub m: Vec3,
}

impl MmsSolution {
    pub fn new(constants: PhysConstants) -> Self {
        MmsSolution { constants }
    }

    pub fn fields(&self, t: f64, x: Vec3) -> MmsFields {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let (st, ct) = t.sin_cos();
        let e = [-st * cx * sy * sz, st * sx * cy * sz, st * sx * sy * cz];
        let b = [
            -0.5 * ct * sx * cy * cz,
            0.25 * ct * cx * sy * cz,
            0.25 * ct * cx * cy * sz,
        ];
        let rho = 2.0 - self.constants.m / (4.0 * self.constants.e) * st * sx * sy * sz;
        let m = [st * sx * cy * cz, st * cx * sy * cz, st * cx * cy * sz];
        MmsFields { e, b, rho, m }
    }

    pub fn e(&self, t: f64, x: Vec3) -> Vec3 {
        self.fields(t, x).e
    }

    pub fn b(&self, t: f64, x: Vec3) -> Vec3 {
        self.fields(t, x).b
    }

    pub fn rho(&self, t: f64, x: Vec3) -> f64 {
        self.fields(t, x).rho
    }

    pub fn m(&self, t: f64, x: Vec3) -> Vec3 {
        self.fields(t, x).m
    }

    fn dt_fields(&self, t: f64, x: Vec3) -> MmsFields {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let (st, ct) = t.sin_cos();
        MmsFields {
            e: [-ct * cx * sy * sz, ct * sx * cy * sz, ct * sx * sy * cz],
            b: [
                0.5 * st * sx * cy * cz,
                -0.25 * st * cx * sy * cz,
                -0.25 * st * cx * cy * sz,
            ],
            rho: -self.constants.m / (4.0 * self.constants.e) * ct * sx * sy * sz,
            m: [ct * sx * cy * cz, ct * cx * sy * cz, ct * cx * cy * sz],
        }
    }

    fn curl_e(&self, t: f64, x: Vec3) -> Vec3 {
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let cx = (PI * x[0]).cos();
        let st = t.sin();
        [
            0.0,
            -2.0 * PI * st * cx * sy * cz,
            2.0 * PI * st * cx * cy * sz,
        ]
    }

    fn curl_b(&self, t: f64, x: Vec3) -> Vec3 {
        let (sx, _) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let ct = t.cos();
        [
            0.0,
            0.75 * PI * ct * sx * cy * sz,
            -0.75 * PI * ct * sx * sy * cz,
        ]
    }

    fn grad_rho(&self, t: f64, x: Vec3) -> Vec3 {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let coef = -self.constants.m / (4.0 * self.constants.e) * t.sin() * PI;
        [coef * cx * sy * sz, coef * sx * cy * sz, coef * sx * sy * cz]
    }

    /// Jacobian rows: jac[j] = gradient of M_j.
    fn jac_m(&self, t: f64, x: Vec3) -> [Vec3; 3] {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (sz, cz) = (PI * x[2]).sin_cos();
        let p = PI * t.sin();
        [
            [p * cx * cy * cz, -p * sx * sy * cz, -p * sx * cy * sz],
            [-p * sx * sy * cz, p * cx * cy * cz, -p * cx * sy * sz],
            [-p * sx * cy * sz, -p * cx * sy * sz, p * cx * cy * cz],
        ]
    }

    /// Source terms that make the manufactured fields exact solutions of
    /// the forced density/momentum/Maxwell system.
    pub fn sources(&self, t: f64, x: Vec3) -> SourceValues {
        let c = self.constants.c;
        let charge_ratio = self.constants.e / self.constants.m;
        let f = self.fields(t, x);
        let dt = self.dt_fields(t, x);
        let grad_rho = self.grad_rho(t, x);
        let jac = self.jac_m(t, x);
        let div_m = jac[0][0] + jac[1][1] + jac[2][2];

        let rho = f.rho;
        let m = f.m;
        let mm = vec3::dot(m, m);
        let gamma = (1.0 + mm / (rho * rho * c * c)).sqrt();

        // grad(gamma) = [ (J_M^T M)/rho^2 - |M|^2 grad(rho)/rho^3 ] / (gamma c^2)
        let jt_m = [
            m[0] * jac[0][0] + m[1] * jac[1][0] + m[2] * jac[2][0],
            m[0] * jac[0][1] + m[1] * jac[1][1] + m[2] * jac[2][1],
            m[0] * jac[0][2] + m[1] * jac[1][2] + m[2] * jac[2][2],
        ];
        let mut grad_gamma = [0.0; 3];
        for k in 0..3 {
            grad_gamma[k] =
                (jt_m[k] / (rho * rho) - mm * grad_rho[k] / (rho * rho * rho)) / (gamma * c * c);
        }

        let w = vec3::scale(1.0 / (rho * gamma), m);
        // div w = div M/(rho gamma) - M . grad(rho gamma)/(rho gamma)^2
        let rg = rho * gamma;
        let grad_rg = [
            gamma * grad_rho[0] + rho * grad_gamma[0],
            gamma * grad_rho[1] + rho * grad_gamma[1],
            gamma * grad_rho[2] + rho * grad_gamma[2],
        ];
        let div_w = div_m / rg - vec3::dot(m, grad_rg) / (rg * rg);

        // S_rho = d_t rho + div(M/gamma).
        let div_m_over_gamma = div_m / gamma - vec3::dot(m, grad_gamma) / (gamma * gamma);
        let s_rho = dt.rho + div_m_over_gamma;

        // S_M = d_t M + div(M ⊗ w) - rho (e/m)(E + w x B / c).
        let wxb = vec3::cross(w, f.b);
        let mut s_m = [0.0; 3];
        for j in 0..3 {
            let transport = vec3::dot(w, jac[j]) + m[j] * div_w;
            let lorentz = rho * charge_ratio * (f.e[j] + wxb[j] / c);
            s_m[j] = dt.m[j] + transport - lorentz;
        }

        // S_E = -(1/c) d_t E + curl B - (4 pi / c) J,  J = (e/m) M / gamma.
        let curl_b = self.curl_b(t, x);
        let mut s_e = [0.0; 3];
        for j in 0..3 {
            let current = charge_ratio * m[j] / gamma;
            s_e[j] = -dt.e[j] / c + curl_b[j] - 4.0 * PI * current / c;
        }

        // S_B = (1/c) d_t B + curl E.
        let curl_e = self.curl_e(t, x);
        let mut s_b = [0.0; 3];
        for j in 0..3 {
            s_b[j] = dt.b[j] / c + curl_e[j];
        }

        SourceValues {
            rho: s_rho,
            m: s_m,
            e: s_e,
            b: s_b,
        }
    }
}

impl SourceTerms for MmsSolution {
    fn eval(&self, t: f64, x: Vec3) -> SourceValues {
        self.sources(t, x)
    }
}
