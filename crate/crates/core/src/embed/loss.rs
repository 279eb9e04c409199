//! The three terms of the spherical embedding objective and their Euclidean
//! (sub)gradients. All inputs are expected to be unit vectors; the trainer
//! re-projects after every step.

/// Center-word/context-word/document max-margin term.
///
/// `max(v_negᵀu − v_posᵀu + u_negᵀd − uᵀd + m, 0)`
pub fn positive_hinge(u: &[f64], v_pos: &[f64], v_neg: &[f64], d: &[f64], u_neg: &[f64], margin: f64) -> f64 {
    hinge_argument(u, v_pos, v_neg, d, u_neg, margin).max(0.0)
}

#[inline]
pub fn hinge_argument(u: &[f64], v_pos: &[f64], v_neg: &[f64], d: &[f64], u_neg: &[f64], margin: f64) -> f64 {
    use crate::linalg::dot;
    dot(v_neg, u) - dot(v_pos, u) + dot(u_neg, d) - dot(u, d) + margin
}

/// Gradients of [`positive_hinge`] with respect to each argument.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeGrad {
    pub u: Vec<f64>,
    pub v_pos: Vec<f64>,
    pub v_neg: Vec<f64>,
    pub d: Vec<f64>,
    pub u_neg: Vec<f64>,
}

/// Subgradient; all zeros when the hinge is inactive.
pub fn positive_hinge_grad(u: &[f64], v_pos: &[f64], v_neg: &[f64], d: &[f64], u_neg: &[f64], margin: f64) -> HingeGrad {
    let p = u.len();
    if hinge_argument(u, v_pos, v_neg, d, u_neg, margin) <= 0.0 {
        return HingeGrad {
            u: vec![0.0; p],
            v_pos: vec![0.0; p],
            v_neg: vec![0.0; p],
            d: vec![0.0; p],
            u_neg: vec![0.0; p],
        };
    }
    HingeGrad {
        u: (0..p).map(|i| v_neg[i] - v_pos[i] - d[i]).collect(),
        v_pos: u.iter().map(|x| -x).collect(),
        v_neg: u.to_vec(),
        d: (0..p).map(|i| u_neg[i] - u[i]).collect(),
        u_neg: d.to_vec(),
    }
}

/// Pull of a category-name word toward its category direction.
///
/// Returns `−κ·(u_nameᵀc)` while `u_nameᵀc < m`, otherwise 0. The log-normalizer
/// of the vMF density is a constant under a shared κ and is left out.
pub fn name_attraction(u_name: &[f64], c: &[f64], kappa: f64, margin: f64) -> f64 {
    let cos = crate::linalg::dot(u_name, c);
    if cos < margin {
        -kappa * cos
    } else {
        0.0
    }
}

/// `(∂/∂u_name, ∂/∂c)` of [`name_attraction`].
pub fn name_attraction_grad(u_name: &[f64], c: &[f64], kappa: f64, margin: f64) -> (Vec<f64>, Vec<f64>) {
    if crate::linalg::dot(u_name, c) < margin {
        (c.iter().map(|x| -kappa * x).collect(), u_name.iter().map(|x| -kappa * x).collect())
    } else {
        (vec![0.0; u_name.len()], vec![0.0; c.len()])
    }
}

/// `max(c_jᵀc_i − m, 0)`
pub fn category_separation(c_i: &[f64], c_j: &[f64], margin: f64) -> f64 {
    (crate::linalg::dot(c_j, c_i) - margin).max(0.0)
}

/// `(∂/∂c_i, ∂/∂c_j)` of [`category_separation`].
pub fn category_separation_grad(c_i: &[f64], c_j: &[f64], margin: f64) -> (Vec<f64>, Vec<f64>) {
    if crate::linalg::dot(c_j, c_i) - margin > 0.0 {
        (c_j.to_vec(), c_i.to_vec())
    } else {
        (vec![0.0; c_i.len()], vec![0.0; c_j.len()])
    }
}
