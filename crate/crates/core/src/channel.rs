//! Network geometry, large-scale fading and the imperfect-CSIT channel draw.
//!
//! Large-scale coefficients follow a three-slope path loss with log-normal
//! shadowing. The channel estimate is modelled as
//! `ĝ = √ζ (√(1−σ_e²) h + σ_e h̃)` with error `g̃ = σ_e √ζ h̃`, so that
//! `Ĝ = √(1−σ_e²) G + G̃` holds exactly and `G = ε (Ĝ − G̃)` with
//! `ε = 1/√(1−σ_e²)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_normal_matrix, frobenius_sq, CMat};

/// Boltzmann constant in J/K, as used by the reference noise model.
pub const BOLTZMANN: f64 = 1.381e-23;

pub const DEFAULT_AP_HEIGHT_M: f64 = 15.0;
pub const DEFAULT_USER_HEIGHT_M: f64 = 1.65;
pub const DEFAULT_CARRIER_MHZ: f64 = 1900.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGeometry {
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    pub area_side: f64,
    pub h_ap: f64,
    pub h_u: f64,
    /// Carrier frequency in MHz.
    pub carrier_freq: f64,
}

impl NetworkGeometry {
    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn with_radio(mut self, h_ap: f64, h_u: f64, carrier_freq: f64) -> Self {
        self.h_ap = h_ap;
        self.h_u = h_u;
        self.carrier_freq = carrier_freq;
        self
    }

    /// Same users, with every AP antenna moved to the centre of the area.
    /// This is the co-located base-station baseline.
    pub fn colocated(&self) -> Self {
        let c = self.area_side / 2.0;
        NetworkGeometry {
            ap_positions: vec![[c, c]; self.n_aps()],
            ..self.clone()
        }
    }

    pub fn distance(&self, ap: usize, user: usize) -> f64 {
        let a = self.ap_positions[ap];
        let u = self.user_positions[user];
        ((a[0] - u[0]).powi(2) + (a[1] - u[1]).powi(2)).sqrt()
    }
}

/// Draws `m` AP and `k` user positions uniformly over `[0, side]²`.
pub fn place_network<R: Rng + ?Sized>(
    m: usize,
    k: usize,
    area_side: f64,
    rng: &mut R,
) -> Result<NetworkGeometry> {
    if k < 1 || m <= k {
        return Err(Error::NotUnderloaded { aps: m, users: k });
    }
    if !(area_side > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "area side must be positive, got {area_side}"
        )));
    }
    let mut draw = |n: usize| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| {
                [
                    rng.random::<f64>() * area_side,
                    rng.random::<f64>() * area_side,
                ]
            })
            .collect()
    };
    let ap_positions = draw(m);
    let user_positions = draw(k);
    Ok(NetworkGeometry {
        ap_positions,
        user_positions,
        area_side,
        h_ap: DEFAULT_AP_HEIGHT_M,
        h_u: DEFAULT_USER_HEIGHT_M,
        carrier_freq: DEFAULT_CARRIER_MHZ,
    })
}

/// Hata-style attenuation constant `L` in dB (frequency in MHz, heights in m).
pub fn attenuation_constant(f_mhz: f64, h_ap: f64, h_u: f64) -> f64 {
    let lf = f_mhz.log10();
    46.3 + 33.9 * lf - 13.82 * h_ap.log10() - (1.1 * lf - 0.7) * h_u + (1.56 * lf - 0.8)
}

/// Three-slope path loss in dB (a negative gain).
pub fn path_loss(d: f64, attenuation_db: f64, d0: f64, d1: f64) -> f64 {
    if d > d1 {
        -attenuation_db - 35.0 * d.log10()
    } else if d > d0 {
        -attenuation_db - 15.0 * d1.log10() - 20.0 * d.log10()
    } else {
        -attenuation_db - 15.0 * d1.log10() - 20.0 * d0.log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleParams {
    pub d0: f64,
    pub d1: f64,
    pub shadow_sigma_db: f64,
    /// Draw one shadowing term per user shared by all antennas instead of one
    /// per link. Used for co-located antennas.
    pub shared_shadowing: bool,
}

impl Default for LargeScaleParams {
    fn default() -> Self {
        LargeScaleParams {
            d0: 10.0,
            d1: 50.0,
            shadow_sigma_db: 8.0,
            shared_shadowing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleCoefficients {
    /// Linear power gains `ζ_{m,k}`.
    pub zeta: DMatrix<f64>,
    pub path_loss_db: DMatrix<f64>,
    pub shadow_db: DMatrix<f64>,
}

impl LargeScaleCoefficients {
    pub fn from_db(path_loss_db: DMatrix<f64>, shadow_db: DMatrix<f64>) -> Self {
        let zeta = path_loss_db.zip_map(&shadow_db, |p, s| 10f64.powf((p + s) / 10.0));
        LargeScaleCoefficients {
            zeta,
            path_loss_db,
            shadow_db,
        }
    }

    /// Wraps a linear ζ matrix directly (no dB bookkeeping).
    pub fn from_linear(zeta: DMatrix<f64>) -> Self {
        let path_loss_db = zeta.map(|z| 10.0 * z.log10());
        let shadow_db = DMatrix::zeros(zeta.nrows(), zeta.ncols());
        LargeScaleCoefficients {
            zeta,
            path_loss_db,
            shadow_db,
        }
    }

    pub fn n_aps(&self) -> usize {
        self.zeta.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.zeta.ncols()
    }
}

/// Path loss per link plus `σ_s z_{m,k}` log-normal shadowing, converted to
/// linear scale.
pub fn large_scale<R: Rng + ?Sized>(
    geometry: &NetworkGeometry,
    params: &LargeScaleParams,
    rng: &mut R,
) -> Result<LargeScaleCoefficients> {
    if !(params.shadow_sigma_db >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shadowing deviation must be non-negative, got {}",
            params.shadow_sigma_db
        )));
    }
    if !(params.d0 > 0.0 && params.d1 > params.d0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < d0 < d1, got d0={}, d1={}",
            params.d0, params.d1
        )));
    }
    let (m, k) = (geometry.n_aps(), geometry.n_users());
    let l = attenuation_constant(geometry.carrier_freq, geometry.h_ap, geometry.h_u);
    let path_loss_db = DMatrix::from_fn(m, k, |ap, u| {
        path_loss(geometry.distance(ap, u), l, params.d0, params.d1)
    });
    let sigma = params.shadow_sigma_db;
    let mut shadow_db = DMatrix::zeros(m, k);
    if params.shared_shadowing {
        for u in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            for ap in 0..m {
                shadow_db[(ap, u)] = sigma * z;
            }
        }
    } else {
        for u in 0..k {
            for ap in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                shadow_db[(ap, u)] = sigma * z;
            }
        }
    }
    Ok(LargeScaleCoefficients::from_db(path_loss_db, shadow_db))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub g_true: CMat,
    pub g_hat: CMat,
    pub g_err: CMat,
    pub sigma_e: f64,
    pub epsilon: f64,
}

fn check_sigma_e(sigma_e: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma_e) {
        return Err(Error::InvalidParameter(format!(
            "sigma_e must lie in [0, 1), got {sigma_e}"
        )));
    }
    Ok(())
}

pub fn epsilon(sigma_e: f64) -> f64 {
    1.0 / (1.0 - sigma_e * sigma_e).sqrt()
}

fn sqrt_zeta(zeta: &LargeScaleCoefficients) -> CMat {
    zeta.zeta.map(|z| Complex64::new(z.sqrt(), 0.0))
}

/// One coherence-block draw of the true channel, its estimate and the
/// estimation error.
pub fn draw_channel<R: Rng + ?Sized>(
    zeta: &LargeScaleCoefficients,
    sigma_e: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    check_sigma_e(sigma_e)?;
    let (m, k) = (zeta.n_aps(), zeta.n_users());
    let h = complex_normal_matrix(m, k, rng);
    let h_tilde = complex_normal_matrix(m, k, rng);
    let sz = sqrt_zeta(zeta);
    let g_true = sz.component_mul(&h);
    let g_err = if sigma_e == 0.0 {
        CMat::zeros(m, k)
    } else {
        sz.component_mul(&h_tilde) * Complex64::new(sigma_e, 0.0)
    };
    let g_hat = if sigma_e == 0.0 {
        g_true.clone()
    } else {
        let a = Complex64::new((1.0 - sigma_e * sigma_e).sqrt(), 0.0);
        sz.component_mul(&(h * a + h_tilde * Complex64::new(sigma_e, 0.0)))
    };
    Ok(ChannelRealization {
        g_true,
        g_hat,
        g_err,
        sigma_e,
        epsilon: epsilon(sigma_e),
    })
}

/// Draws `n` error matrices `G̃ ~ CN(0, σ_e² ζ)` elementwise.
pub fn draw_error_matrices<R: Rng + ?Sized>(
    zeta: &LargeScaleCoefficients,
    sigma_e: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<CMat>> {
    check_sigma_e(sigma_e)?;
    let (m, k) = (zeta.n_aps(), zeta.n_users());
    let scale = sqrt_zeta(zeta) * Complex64::new(sigma_e, 0.0);
    Ok((0..n)
        .map(|_| complex_normal_matrix(m, k, rng).component_mul(&scale))
        .collect())
}

impl ChannelRealization {
    /// Candidate realization consistent with a fixed estimate and a given
    /// error draw: `G = ε (Ĝ − G̃)`.
    pub fn from_estimate(g_hat: &CMat, g_err: CMat, sigma_e: f64) -> Result<Self> {
        check_sigma_e(sigma_e)?;
        if g_hat.shape() != g_err.shape() {
            return Err(Error::Dimension(format!(
                "estimate is {:?}, error is {:?}",
                g_hat.shape(),
                g_err.shape()
            )));
        }
        let eps = epsilon(sigma_e);
        let g_true = (g_hat - &g_err) * Complex64::new(eps, 0.0);
        Ok(ChannelRealization {
            g_true,
            g_hat: g_hat.clone(),
            g_err,
            sigma_e,
            epsilon: eps,
        })
    }

    pub fn n_aps(&self) -> usize {
        self.g_hat.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.g_hat.ncols()
    }
}

/// Thermal noise power `T0 k_B B N_f` in watts.
pub fn noise_variance(t0_kelvin: f64, bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    t0_kelvin * BOLTZMANN * bandwidth_hz * 10f64.powf(noise_figure_db / 10.0)
}

/// `P_t Tr(Gᵀ G*) / (M K σ_w²)` in dB.
pub fn snr_db(g: &CMat, pt: f64, sigma_w2: f64) -> f64 {
    let mk = (g.nrows() * g.ncols()) as f64;
    10.0 * (pt * frobenius_sq(g) / (mk * sigma_w2)).log10()
}

/// Transmit power that realizes `target_db` under [`snr_db`].
pub fn pt_for_snr(g: &CMat, target_db: f64, sigma_w2: f64) -> f64 {
    let mk = (g.nrows() * g.ncols()) as f64;
    10f64.powf(target_db / 10.0) * mk * sigma_w2 / frobenius_sq(g)
}
