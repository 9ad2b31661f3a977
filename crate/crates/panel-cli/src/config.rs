//! Scenario configuration: an INI-style key/value tree with fixed sections.
//!
//! Parsing is strict: unknown sections, unknown keys, missing required keys
//! and constraint violations are all collected and reported together. Files
//! hash to a stable fingerprint so checkpoints can refuse foreign configs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "configuration invalid ({} problem(s)):",
            self.problems.len()
        )?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Parsed section with insertion-ordered keys.
#[derive(Debug, Clone, Default)]
pub struct Section {
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// The whole configuration document plus its raw bytes.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub sections: Vec<(String, Section)>,
    pub raw: String,
}

/// Allowed keys per section; anything else is an error.
const SCHEMA: &[(&str, &[&str])] = &[
    ("domain", &["lx", "ly"]),
    ("basis", &["nx", "ny", "quad_order"]),
    (
        "physics",
        &[
            "flow_speed",
            "damping",
            "prestress",
            "stiffness",
            "load",
            "load_scale",
            "flow_coupling",
            "flow_damping_scale",
        ],
    ),
    ("delay", &["n_theta", "n_s", "tstar_grid"]),
    (
        "time",
        &[
            "n_steps",
            "output_stride",
            "history",
            "u0",
            "v0",
            "checkpoint_stride",
        ],
    ),
    (
        "output",
        &["write_states", "write_energies", "write_identity"],
    ),
    (
        "quasi",
        &["directions", "amplitude", "steps", "record_stride", "seed"],
    ),
    (
        "defect",
        &["kind", "h_list", "n_list", "weak_norm", "refine_factor"],
    ),
    (
        "determine",
        &[
            "n_list",
            "amplitude",
            "steps",
            "record_stride",
            "functional_tol",
            "state_tol",
            "seed",
        ],
    ),
    (
        "dimension",
        &[
            "transient",
            "samples",
            "sample_stride",
            "radii_lo",
            "radii_hi",
            "radii_count",
            "amplitude",
            "seed",
        ],
    ),
    (
        "flowtrace",
        &[
            "t_eval",
            "mode_ix",
            "mode_iy",
            "amplitude",
            "omega",
            "phase",
            "points_per_side",
            "z_list",
            "n_s",
            "n_theta",
            "tol",
        ],
    ),
];

impl ScenarioConfig {
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        let mut problems = Vec::new();
        let mut sections: Vec<(String, Section)> = Vec::new();
        let mut current: Option<usize> = None;
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    problems.push(format!("line {}: unknown section [{name}]", lineno + 1));
                }
                if sections.iter().any(|(n, _)| *n == name) {
                    problems.push(format!("line {}: duplicate section [{name}]", lineno + 1));
                }
                sections.push((name, Section::default()));
                current = Some(sections.len() - 1);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                ));
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            match current {
                None => problems.push(format!(
                    "line {}: key '{key}' before any section",
                    lineno + 1
                )),
                Some(idx) => {
                    let (name, section) = &mut sections[idx];
                    if let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == name) {
                        if !keys.contains(&key.as_str()) {
                            problems.push(format!(
                                "line {}: unknown key '{key}' in [{name}]",
                                lineno + 1
                            ));
                        }
                    }
                    if section.entries.iter().any(|(k, _)| *k == key) {
                        problems.push(format!(
                            "line {}: duplicate key '{key}' in [{name}]",
                            lineno + 1
                        ));
                    }
                    section.entries.push((key, value));
                }
            }
        }
        if problems.is_empty() {
            Ok(ScenarioConfig {
                sections,
                raw: raw.to_string(),
            })
        } else {
            Err(ConfigError { problems })
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    pub fn require_sections(&self, names: &[&str]) -> Result<(), ConfigError> {
        let have: BTreeSet<&str> = self.sections.iter().map(|(n, _)| n.as_str()).collect();
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !have.contains(**n))
            .map(|n| format!("missing required section [{n}]"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: missing })
        }
    }

    /// Stable fingerprint of the raw document.
    pub fn hash(&self) -> u64 {
        panel_core::fnv1a64(self.raw.as_bytes())
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| ConfigError {
                problems: vec![format!("[{section}] {key}: '{v}' is not a number")],
            }),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| ConfigError {
                problems: vec![format!(
                    "[{section}] {key}: '{v}' is not a nonnegative integer"
                )],
            }),
        }
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| ConfigError {
                problems: vec![format!(
                    "[{section}] {key}: '{v}' is not a nonnegative integer"
                )],
            }),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(ConfigError {
                problems: vec![format!("[{section}] {key}: '{v}' is not true/false")],
            }),
        }
    }

    /// Space-separated float list.
    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for tok in v.split_whitespace() {
                    out.push(tok.parse::<f64>().map_err(|_| ConfigError {
                        problems: vec![format!("[{section}] {key}: '{tok}' is not a number")],
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    /// Space-separated integer list.
    pub fn get_usize_list(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for tok in v.split_whitespace() {
                    out.push(tok.parse::<usize>().map_err(|_| ConfigError {
                        problems: vec![format!("[{section}] {key}: '{tok}' is not an integer")],
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    /// Modal amplitude list "ix,iy:value ix,iy:value ...".
    pub fn get_mode_list(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<Vec<(usize, usize, f64)>>, ConfigError> {
        match self.section(section).and_then(|s| s.get(key)) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for tok in v.split_whitespace() {
                    let bad = || ConfigError {
                        problems: vec![format!(
                            "[{section}] {key}: '{tok}' is not of the form ix,iy:value"
                        )],
                    };
                    let (idx, val) = tok.split_once(':').ok_or_else(bad)?;
                    let (ix, iy) = idx.split_once(',').ok_or_else(bad)?;
                    out.push((
                        ix.parse().map_err(|_| bad())?,
                        iy.parse().map_err(|_| bad())?,
                        val.parse().map_err(|_| bad())?,
                    ));
                }
                Ok(Some(out))
            }
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (name, section) in &self.sections {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in &section.entries {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}
