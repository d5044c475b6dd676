//! Configs compiled into the binary, runnable by name.

const SHIPPED: &[(&str, &str)] = &[
    ("fig1", include_str!("../../../configs/fig1.toml")),
    ("fig2", include_str!("../../../configs/fig2.toml")),
    ("fig3", include_str!("../../../configs/fig3.toml")),
    ("fig4", include_str!("../../../configs/fig4.toml")),
    ("fig5", include_str!("../../../configs/fig5.toml")),
    ("traffic_md_gd", include_str!("../../../configs/traffic_md_gd.toml")),
    ("traffic_paths", include_str!("../../../configs/traffic_paths.toml")),
    ("table1", include_str!("../../../configs/table1.toml")),
    ("fig7", include_str!("../../../configs/fig7.toml")),
    ("table2", include_str!("../../../configs/table2.toml")),
    ("fig8", include_str!("../../../configs/fig8.toml")),
    ("fluctuation_envelope", include_str!("../../../configs/fluctuation_envelope.toml")),
    ("ou_anchor", include_str!("../../../configs/ou_anchor.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// `(name, description)` for every shipped config.
pub fn list() -> Vec<(&'static str, String)> {
    SHIPPED
        .iter()
        .map(|(n, t)| {
            let desc = ismd::harness::ExperimentConfig::parse(t).map(|c| c.description).unwrap_or_else(|e| format!("invalid: {e}"));
            (*n, desc)
        })
        .collect()
}
