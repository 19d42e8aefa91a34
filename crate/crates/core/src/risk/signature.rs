use serde::{Deserialize, Serialize};

use crate::features::{signature_flag, FeatureVector};
use crate::ingest::HsCode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongThresholds {
    /// Minimum cumulative price decline, as a positive fraction.
    pub price_decline: f64,
    pub volume_growth: f64,
}

impl Default for StrongThresholds {
    fn default() -> Self {
        StrongThresholds {
            price_decline: 0.10,
            volume_growth: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureCall {
    pub hs_code: HsCode,
    pub signature: bool,
    pub strong_signature: bool,
    /// Relative change of the fitted price line between the window endpoints;
    /// `None` when the fitted start is not positive.
    pub price_change: Option<f64>,
    pub kg_change: Option<f64>,
}

/// Relative change from `start` to `end`. A non-positive start has no
/// meaningful ratio, so growth from it counts as unbounded.
fn relative_change(start: f64, end: f64) -> f64 {
    if start > 0.0 {
        (end - start) / start
    } else if end > start {
        f64::INFINITY
    } else if end < start {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

pub fn signature_call(fv: &FeatureVector, th: &StrongThresholds) -> SignatureCall {
    let span = fv.span();
    let (k, p) = (fv.kg_fit(), fv.price_fit());
    let kg_change = relative_change(k.at(0.0), k.at(span));
    let price_change = relative_change(p.at(0.0), p.at(span));
    let signature = signature_flag(fv);
    SignatureCall {
        hs_code: fv.hs_code.clone(),
        signature,
        strong_signature: signature
            && price_change <= -th.price_decline
            && kg_change >= th.volume_growth,
        price_change: Some(price_change).filter(|v| v.is_finite()),
        kg_change: Some(kg_change).filter(|v| v.is_finite()),
    }
}

pub fn detect_signature_codes(
    vectors: &[FeatureVector],
    th: &StrongThresholds,
) -> Vec<SignatureCall> {
    vectors.iter().map(|fv| signature_call(fv, th)).collect()
}
