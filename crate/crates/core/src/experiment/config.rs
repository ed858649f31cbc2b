use super::ExperimentError;

/// Keys accepted in a `key=value` experiment file.
pub const VALID_KEYS: &[&str] = &[
    "H",
    "W",
    "D_train",
    "D_test",
    "sigma",
    "base_seed",
    "epochs",
    "lr",
    "T",
    "tau",
    "replicates",
    "clip",
    "sigma_grid",
    "D_grid",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub height: usize,
    pub width: usize,
    pub d_train: usize,
    pub d_test: usize,
    pub sigma: f64,
    pub base_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub timesteps: usize,
    pub tau: f64,
    pub replicates: usize,
    pub clip: Option<f64>,
    pub sigma_grid: Vec<f64>,
    pub d_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            height: 64,
            width: 64,
            d_train: 200,
            d_test: 20,
            sigma: 0.0,
            base_seed: 0,
            epochs: 10,
            lr: 0.01,
            timesteps: 5,
            tau: 1.0,
            replicates: 3,
            clip: None,
            sigma_grid: (0..=10).map(f64::from).collect(),
            d_grid: (1..=10).collect(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ExperimentError> {
    value
        .parse()
        .map_err(|_| ExperimentError::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ExperimentError> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Reads `key=value` lines; `#` starts a comment. Later keys override
    /// earlier ones.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ExperimentError::Usage(format!(
                    "line {}: expected key=value, got {line:?}",
                    n + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        match key {
            "H" => self.height = parse_num(key, value)?,
            "W" => self.width = parse_num(key, value)?,
            "D_train" => self.d_train = parse_num(key, value)?,
            "D_test" => self.d_test = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "base_seed" => self.base_seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "T" => self.timesteps = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "replicates" => self.replicates = parse_num(key, value)?,
            "clip" => {
                self.clip = match value {
                    "" | "none" | "off" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "sigma_grid" => self.sigma_grid = parse_list(key, value)?,
            "D_grid" => self.d_grid = parse_list(key, value)?,
            _ => {
                return Err(ExperimentError::Usage(format!(
                    "unknown config key {key:?}; valid keys: {}",
                    VALID_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Range checks; grids outside σ ∈ [0, 10] and D ∈ [1, 10] need
    /// `extended`.
    pub fn validate(&self, extended: bool) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Validation(m));
        if self.height < 16
            || self.width < 16
            || !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
        {
            return bad(format!(
                "image size {}x{} must be ≥ 16 and divisible by 4",
                self.height, self.width
            ));
        }
        if self.d_train == 0 || self.d_test == 0 {
            return bad("D_train and D_test must be positive".into());
        }
        let sigma_ok = |s: f64| s.is_finite() && s >= 0.0;
        if !sigma_ok(self.sigma) || !self.sigma_grid.iter().all(|&s| sigma_ok(s)) {
            return bad("noise σ must be finite and ≥ 0".into());
        }
        if self.epochs == 0 || self.timesteps == 0 || self.replicates == 0 {
            return bad("epochs, T and replicates must be positive".into());
        }
        if !(self.lr > 0.0 && self.tau > 0.0) {
            return bad("lr and tau must be positive".into());
        }
        if self.clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("clip must be positive".into());
        }
        if self.sigma_grid.is_empty() || self.d_grid.is_empty() || self.d_grid.contains(&0) {
            return bad("grids must be nonempty and D values positive".into());
        }
        if !extended {
            if self.sigma_grid.iter().any(|&s| s > 10.0) {
                return bad("σ grid beyond 10 requires --extended".into());
            }
            if self.d_grid.iter().any(|&d| d > 10) {
                return bad("D grid beyond 10 requires --extended".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let c = ExperimentConfig::parse("# x\nH=32 # inline\nW = 32\nsigma_grid=0, 6\nD_train=5\n")
            .unwrap();
        assert_eq!((c.height, c.width, c.d_train), (32, 32, 5));
        assert_eq!(c.sigma_grid, vec![0.0, 6.0]);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ExperimentConfig::parse("colour=red").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ExperimentError::Usage(_)));
        for k in VALID_KEYS {
            assert!(msg.contains(k));
        }
    }

    #[test]
    fn negative_sigma_is_invalid() {
        let c = ExperimentConfig::parse("sigma=-1").unwrap();
        assert!(matches!(
            c.validate(false),
            Err(ExperimentError::Validation(_))
        ));
    }

    #[test]
    fn extended_grid_needs_flag() {
        let c = ExperimentConfig::parse("D_grid=1,20").unwrap();
        assert!(c.validate(false).is_err());
        assert!(c.validate(true).is_ok());
    }
}
