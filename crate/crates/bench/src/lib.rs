// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the benchmarks.

use displace_core::synth::{generate, ScenarioSpec, SyntheticData};

/// Two-city scenario with commuters, displacement and missing days.
pub fn scenario(n_users: usize) -> ScenarioSpec {
    let text = format!(
        r#"{{
            "seed": 42,
            "n_users": {n_users},
            "cities": [
                {{"code": "APA", "population": 68839, "barangays": 20, "user_share": 0.6}},
                {{"code": "TUG", "population": 166334, "barangays": 20, "user_share": 0.4}}
            ],
            "archetype_mix": {{"LocalResident": 0.7, "IntraCityCommuter": 0.1, "InterCityDaily": 0.15, "WeekendOnly": 0.05}},
            "calendar": {{
                "baseline_start": "2025-08-04", "baseline_end": "2025-09-14",
                "disaster_onset": "2025-09-22", "observation_end": "2025-10-06"
            }},
            "displacement_fraction": {{"APA": 0.07}},
            "destination_distribution": {{"TUG": 1.0}},
            "missing_daily_prob": 0.1,
            "return_hazard": 0.05,
            "observation_noise": 0.01
        }}"#
    );
    ScenarioSpec::from_json(&text).expect("fixture scenario is valid")
}

pub fn data(n_users: usize) -> SyntheticData {
    generate(&scenario(n_users)).expect("fixture generates")
}
