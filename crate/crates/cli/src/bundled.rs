//! Scenarios shipped with the binary.

use crate::scenario::Scenario;

macro_rules! bundle {
    ($($file:literal),* $(,)?) => {
        [$(($file, include_str!(concat!("../scenarios/", $file)))),*]
    };
}

pub const BUNDLED: [(&str, &str); 14] = bundle!(
    "f1_blowdown.json",
    "f1_fibration.json",
    "p2_hyperplane.json",
    "smoothing_sweep.json",
    "scalar_curvature.json",
    "degenerate_flow.json",
    "normalized_ke.json",
    "ricci_flat.json",
    "pole_solve.json",
    "ke_solve.json",
    "stability_sweep.json",
    "sphere_extinction.json",
    "sphere_normalized.json",
    "acceptance.json",
);

pub fn scenario(file: &str) -> Option<Scenario> {
    let (_, text) = BUNDLED.iter().find(|(f, _)| *f == file)?;
    Some(Scenario::from_json(text).expect("bundled scenarios parse"))
}

pub fn all() -> Vec<(&'static str, Scenario)> {
    BUNDLED.iter().map(|(f, text)| (*f, Scenario::from_json(text).expect("bundled scenarios parse"))).collect()
}
