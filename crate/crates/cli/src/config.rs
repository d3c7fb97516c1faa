//! Layered run configuration.
//!
//! Every setting has a dotted key (`train.max_epochs`) and a documented
//! default. Layers are applied in this order, later ones winning:
//!
//! 1. built-in defaults
//! 2. the selected profile (`reference` or `desk`)
//! 3. the TOML config file (`[train] max_epochs = 60`)
//! 4. environment variables (`WAVEMOTION_TRAIN_MAX_EPOCHS=60`)
//! 5. command-line flags and `--set key=value`
//!
//! The resolved configuration is written next to every command's outputs and
//! can be fed back with `--config` to repeat the run exactly.

use std::collections::BTreeMap;
use std::path::Path;

use toml::{Table, Value};
use wavemotion::dataset::WindowSpec;
use wavemotion::forecaster::TrainSpec;
use wavemotion::nn::{AdamConfig, ArchitectureSpec, StepDecay};
use wavemotion::oracle::{OracleSpec, PhaseMode};
use wavemotion::wave::SeaStateSpec;
use wavemotion::{Error, Result};

/// Prefix of environment overrides.
pub const ENV_PREFIX: &str = "WAVEMOTION_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
    IntList,
    FloatList,
    /// List of `[hs, tp]` pairs.
    States,
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    pub doc: &'static str,
}

macro_rules! keys {
    ($($key:literal $kind:ident $default:literal $doc:literal;)*) => {
        /// Every recognized setting.
        pub const KEYS: &[KeySpec] = &[$(KeySpec { key: $key, kind: Kind::$kind, default: $default, doc: $doc }),*];
    };
}

keys! {
    "profile" Str "\"reference\"" "Default set: reference (full scale) or desk (small, fast)";
    "seed" Int "1" "Master seed for every random stream";
    "sea.gamma" Float "2.4" "JONSWAP peak enhancement factor";
    "sea.dt" Float "0.775" "Sample interval in seconds";
    "sea.duration" Float "1800.0" "Simulated seconds per case, before the trim";
    "sea.components" Int "1024" "Number of harmonic components";
    "sea.band_low" Float "0.4" "Lower edge of the synthesis band, as a multiple of the peak frequency";
    "sea.band_high" Float "4.0" "Upper edge of the synthesis band, as a multiple of the peak frequency";
    "oracle.natural_period" Float "19.0" "Heave natural period (s)";
    "oracle.damping_ratio" Float "0.08" "Damping ratio";
    "oracle.rao_scale" Float "0.6" "Static response per metre of wave";
    "oracle.phase_mode" Str "\"minimum-phase\"" "minimum-phase or zero-phase";
    "oracle.nonlinearity" Float "0.0" "Cubic stiffness coefficient; 0 selects the linear filter";
    "case.trim_seconds" Float "120.0" "Start-up seconds removed from every case";
    "cases.train_states" States "[[17.4, 15.9], [12.5, 13.5]]" "The two cross-validation sea states [hs, tp]";
    "cases.test_states" States "[[15.0, 14.7], [13.5, 15.2]]" "The two held-out test sea states [hs, tp]";
    "cases.folds" Int "8" "Number of cross-validation folds (two cases each)";
    "psd.segment" Int "256" "Welch segment length for the PSD checks";
    "psd.overlap" Float "0.5" "Welch segment overlap fraction";
    "window.n_factor" Int "3" "History length n as a multiple of m";
    "window.w_factor" Int "1" "Wave lag w as a multiple of m";
    "arch.num_lstm_layers" Int "2" "Stacked LSTM layers";
    "arch.lstm_hidden" Int "200" "LSTM hidden width";
    "arch.num_fc_blocks" Int "5" "Dense + tanh + dropout blocks";
    "arch.fc_width" Int "80" "Dense block width";
    "arch.dropout_p" Float "0.315" "Dropout probability";
    "arch.lstm_shortcuts" Bool "true" "Additive shortcuts between LSTM layers";
    "arch.lstm_dropout" Bool "true" "Dropout on LSTM layer outputs";
    "train.horizons" IntList "[20]" "Forecast horizons m to train";
    "train.noise_levels" FloatList "[0.0]" "Training input noise levels";
    "train.folds" IntList "[]" "Folds to train; empty means all";
    "train.max_epochs" Int "200" "Epoch limit";
    "train.batch_size" Int "2048" "Mini-batch size";
    "train.micro_batch" Int "128" "Gradient-accumulation slice size";
    "train.patience" Int "20" "Early-stopping patience in epochs";
    "train.min_delta" Float "0.0" "Minimum validation improvement";
    "train.lr_initial" Float "0.01" "Initial learning rate";
    "train.lr_plateau" Int "10" "Epochs at the initial rate";
    "train.lr_period" Int "50" "Epochs between decays";
    "train.lr_factor" Float "0.1" "Decay factor";
    "predict.checkpoint" Str "\"\"" "Checkpoint path; empty selects models/m{m}_nl{nl}_fold{fold}.wmck";
    "predict.horizon" Int "20" "Horizon of the default checkpoint";
    "predict.noise_level" Float "0.0" "Training noise level of the default checkpoint";
    "predict.fold" Int "0" "Fold of the default checkpoint";
    "predict.case" Str "\"\"" "Case id; empty selects the first test case";
    "predict.anchor" Int "-1" "Anchor index p; negative picks a random admissible anchor";
    "predict.b" Int "500" "Monte-Carlo replicas";
    "predict.level" Float "0.9" "Confidence level";
    "eval.horizons" IntList "[]" "Horizons to evaluate; empty means train.horizons";
    "eval.noise_level" Float "0.0" "Training noise level of the evaluated checkpoints";
    "eval.fold" Int "0" "Fold of the evaluated checkpoints";
    "eval.b" Int "500" "Replicas for the covariance and Gaussianity analysis";
    "eval.coverage_b" Int "200" "Replicas per window for the coverage estimate";
    "eval.coverage_stride" Int "25" "Use every k-th test window for coverage";
    "eval.level" Float "0.9" "Confidence level";
    "eval.anchor" Int "-1" "Anchor in the first test case for the ensemble analysis; negative means the middle";
    "eval.point" Int "0" "Horizon point of the Gaussianity histogram";
    "eval.gaussianity_b" IntList "[50, 100, 500]" "Replica counts of the Gaussianity table";
    "eval.bins" Int "20" "Histogram bins";
    "sweep.horizons" IntList "[]" "Horizons to sweep; empty means train.horizons";
    "sweep.train_noise" FloatList "[0.0, 0.2, 0.6]" "Training noise levels whose checkpoints are compared";
    "sweep.test_noise" FloatList "[0.0, 0.25, 0.5, 0.75, 1.0]" "Noise levels added to the test inputs";
    "sweep.fold" Int "0" "Fold of the compared checkpoints";
    "gradcheck.hidden" Int "4" "LSTM width of the checked network";
    "gradcheck.steps" Int "6" "Sequence length";
    "gradcheck.batch" Int "2" "Batch size";
    "gradcheck.horizon" Int "3" "Output width";
    "gradcheck.step" Float "1e-5" "Finite-difference step";
    "gradcheck.tolerance" Float "1e-4" "Largest accepted relative error";
}

/// Overrides applied by the desk profile.
pub const DESK_PROFILE: &[(&str, &str)] = &[
    ("sea.duration", "720.0"),
    ("cases.folds", "2"),
    ("arch.lstm_hidden", "32"),
    ("arch.fc_width", "16"),
    ("arch.num_fc_blocks", "2"),
    ("train.max_epochs", "60"),
    ("train.batch_size", "64"),
    ("train.patience", "20"),
    ("train.lr_plateau", "30"),
    ("train.folds", "[0]"),
    ("eval.coverage_stride", "10"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Environment variable name of a key: `train.max_epochs` -> `WAVEMOTION_TRAIN_MAX_EPOCHS`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

fn literal(text: &str) -> Option<Value> {
    format!("v = {text}").parse::<Table>().ok().and_then(|mut t| t.remove("v"))
}

/// Checks (and where harmless coerces) a value against the key's kind.
fn coerce(spec: &KeySpec, value: Value) -> Result<Value> {
    let bad = |v: &Value| Error::Config(format!("{} expects {:?}, got {v}", spec.key, spec.kind));
    let number = |v: &Value| match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    };
    let as_list = |v: Value| match v {
        Value::Array(a) => a,
        other => vec![other],
    };
    Ok(match spec.kind {
        Kind::Int => match value {
            Value::Integer(_) => value,
            ref v => return Err(bad(v)),
        },
        Kind::Float => Value::Float(number(&value).ok_or_else(|| bad(&value))?),
        Kind::Bool => match value {
            Value::Boolean(_) => value,
            ref v => return Err(bad(v)),
        },
        Kind::Str => match value {
            Value::String(_) => value,
            ref v => return Err(bad(v)),
        },
        Kind::IntList => {
            let items = as_list(value);
            if let Some(v) = items.iter().find(|v| !v.is_integer()) {
                return Err(bad(v));
            }
            Value::Array(items)
        }
        Kind::FloatList => {
            let items = as_list(value);
            let floats = items.iter().map(|v| number(v).map(Value::Float).ok_or_else(|| bad(v))).collect::<Result<_>>()?;
            Value::Array(floats)
        }
        Kind::States => {
            let mut out = Vec::new();
            for item in as_list(value) {
                let pair = item.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad(&item))?;
                let hs = number(&pair[0]).ok_or_else(|| bad(&item))?;
                let tp = number(&pair[1]).ok_or_else(|| bad(&item))?;
                out.push(Value::Array(vec![Value::Float(hs), Value::Float(tp)]));
            }
            Value::Array(out)
        }
    })
}

/// Parses an override given as text: a TOML literal, or a bare word for string keys.
pub fn parse_override(key: &str, text: &str) -> Result<Value> {
    let spec = key_spec(key).ok_or_else(|| Error::Config(format!("unknown setting {key}")))?;
    let value = match literal(text) {
        Some(v) => v,
        None if spec.kind == Kind::Str => Value::String(text.to_string()),
        None => return Err(Error::Config(format!("cannot parse {text:?} as a value for {key}"))),
    };
    coerce(spec, value)
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Settings from a TOML document, flattened to dotted keys.
pub fn parse_file_text(text: &str) -> Result<Vec<(String, Value)>> {
    let table: Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
    let mut out = Vec::new();
    flatten("", &table, &mut out);
    out.into_iter()
        .map(|(k, v)| {
            let spec = key_spec(&k).ok_or_else(|| Error::Config(format!("unknown setting {k} in config file")))?;
            Ok((k, coerce(spec, v)?))
        })
        .collect()
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

/// Inputs to [`RunConfig::resolve`], lowest precedence first.
#[derive(Debug, Default, Clone)]
pub struct Layers {
    pub file: Vec<(String, Value)>,
    pub env: Vec<(String, Value)>,
    pub cli: Vec<(String, Value)>,
}

impl Layers {
    /// Reads every `WAVEMOTION_*` variable that names a known key.
    pub fn from_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for spec in KEYS {
            if let Some(text) = lookup(&env_name(spec.key)) {
                self.env.push((spec.key.to_string(), parse_override(spec.key, &text)?));
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        self.file = parse_file_text(&text)?;
        Ok(())
    }
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .map(|k| (k.key.to_string(), coerce(k, literal(k.default).expect("default literal")).expect("default kind")))
            .collect();
        RunConfig { values }
    }

    pub fn resolve(layers: &Layers) -> Result<Self> {
        let mut cfg = Self::defaults();
        let profile = layers
            .cli
            .iter()
            .chain(&layers.env)
            .chain(&layers.file)
            .find(|(k, _)| k == "profile")
            .map(|(_, v)| v.as_str().unwrap_or_default().to_string())
            .unwrap_or_else(|| "reference".to_string());
        match profile.as_str() {
            "reference" => {}
            "desk" => {
                for (k, v) in DESK_PROFILE {
                    cfg.set(k, literal(v).expect("profile literal"))?;
                }
            }
            other => return Err(Error::Config(format!("unknown profile {other:?} (expected reference or desk)"))),
        }
        for (k, v) in layers.file.iter().chain(&layers.env).chain(&layers.cli) {
            cfg.set(k, v.clone())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let spec = key_spec(key).ok_or_else(|| Error::Config(format!("unknown setting {key}")))?;
        self.values.insert(key.to_string(), coerce(spec, value)?);
        Ok(())
    }

    fn value(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("setting {key} is not declared"))
    }

    pub fn get_i64(&self, key: &str) -> i64 {
        self.value(key).as_integer().expect("integer setting")
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self.get_i64(key);
        usize::try_from(v).map_err(|_| Error::Config(format!("{key} must be >= 0 (got {v})")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        let v = self.get_i64(key);
        u64::try_from(v).map_err(|_| Error::Config(format!("{key} must be >= 0 (got {v})")))
    }

    pub fn get_f64(&self, key: &str) -> f64 {
        self.value(key).as_float().expect("float setting")
    }

    pub fn get_bool(&self, key: &str) -> bool {
        self.value(key).as_bool().expect("bool setting")
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.value(key).as_str().expect("string setting")
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let arr = self.value(key).as_array().expect("list setting");
        arr.iter()
            .map(|v| {
                let i = v.as_integer().expect("integer item");
                usize::try_from(i).map_err(|_| Error::Config(format!("{key} items must be >= 0 (got {i})")))
            })
            .collect()
    }

    pub fn get_f64_list(&self, key: &str) -> Vec<f64> {
        self.value(key).as_array().expect("list setting").iter().map(|v| v.as_float().expect("float item")).collect()
    }

    pub fn get_states(&self, key: &str) -> Vec<(f64, f64)> {
        self.value(key)
            .as_array()
            .expect("list setting")
            .iter()
            .map(|p| {
                let p = p.as_array().expect("pair");
                (p[0].as_float().expect("hs"), p[1].as_float().expect("tp"))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_u64("seed")
    }

    /// Sea state for a case; the duration, grid and band come from `sea.*`.
    pub fn sea_state(&self, hs: f64, tp: f64, seed: u64) -> Result<SeaStateSpec> {
        let mut s = SeaStateSpec::new(hs, tp).with_seed(seed).with_duration(self.get_f64("sea.duration"));
        s.gamma = self.get_f64("sea.gamma");
        s.dt = self.get_f64("sea.dt");
        s.n_components = self.get_usize("sea.components")?;
        s.omega_min = self.get_f64("sea.band_low") * s.omega_p();
        s.omega_max = self.get_f64("sea.band_high") * s.omega_p();
        s.validate()?;
        Ok(s)
    }

    pub fn oracle(&self) -> Result<OracleSpec> {
        let spec = OracleSpec {
            natural_period: self.get_f64("oracle.natural_period"),
            damping_ratio: self.get_f64("oracle.damping_ratio"),
            rao_scale: self.get_f64("oracle.rao_scale"),
            phase_mode: self.get_str("oracle.phase_mode").parse::<PhaseMode>()?,
            nonlinearity: self.get_f64("oracle.nonlinearity"),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn window(&self, m: usize) -> Result<WindowSpec> {
        WindowSpec::scaled(m, self.get_usize("window.n_factor")?, self.get_usize("window.w_factor")?)
    }

    pub fn arch(&self, m: usize) -> Result<ArchitectureSpec> {
        let a = ArchitectureSpec {
            num_lstm_layers: self.get_usize("arch.num_lstm_layers")?,
            lstm_hidden: self.get_usize("arch.lstm_hidden")?,
            num_fc_blocks: self.get_usize("arch.num_fc_blocks")?,
            fc_width: self.get_usize("arch.fc_width")?,
            dropout_p: self.get_f64("arch.dropout_p"),
            horizon: m,
            lstm_shortcuts: self.get_bool("arch.lstm_shortcuts"),
            lstm_dropout: self.get_bool("arch.lstm_dropout"),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn train_spec(&self) -> Result<TrainSpec> {
        let spec = TrainSpec {
            max_epochs: self.get_usize("train.max_epochs")?,
            batch_size: self.get_usize("train.batch_size")?,
            patience: self.get_usize("train.patience")?,
            min_delta: self.get_f64("train.min_delta"),
            seed: self.seed()?,
            micro_batch: self.get_usize("train.micro_batch")?,
            schedule: StepDecay {
                initial: self.get_f64("train.lr_initial"),
                plateau: self.get_usize("train.lr_plateau")?,
                period: self.get_usize("train.lr_period")?,
                factor: self.get_f64("train.lr_factor"),
            },
            adam: AdamConfig::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Horizons for a command, falling back to `train.horizons` when its own list is empty.
    pub fn horizons(&self, key: &str) -> Result<Vec<usize>> {
        let own = self.get_usize_list(key)?;
        let list = if own.is_empty() { self.get_usize_list("train.horizons")? } else { own };
        if list.is_empty() || list.contains(&0) {
            return Err(Error::Config(format!("{key}: horizons must be a non-empty list of positive integers")));
        }
        Ok(list)
    }

    /// Cross-checks that do not belong to any single spec type.
    pub fn validate(&self) -> Result<()> {
        if self.get_states("cases.train_states").len() != 2 {
            return Err(Error::Config("cases.train_states must list exactly two sea states".into()));
        }
        if self.get_states("cases.test_states").len() != 2 {
            return Err(Error::Config("cases.test_states must list exactly two sea states".into()));
        }
        for (k, v) in &self.values {
            if let Some(f) = v.as_float() {
                if !f.is_finite() {
                    return Err(Error::Config(format!("{k} must be finite")));
                }
            }
        }
        self.seed()?;
        for (hs, tp) in self.get_states("cases.train_states").into_iter().chain(self.get_states("cases.test_states")) {
            self.sea_state(hs, tp, 0)?;
        }
        self.oracle()?;
        self.train_spec()?;
        for m in self.horizons("train.horizons")? {
            self.window(m)?;
            self.arch(m)?;
        }
        Ok(())
    }

    /// TOML text of every setting, grouped by section.
    pub fn snapshot(&self) -> String {
        let mut root = Table::new();
        for (key, value) in &self.values {
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().expect("non-empty key");
            let mut table = &mut root;
            for p in parts {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Table(Table::new()))
                    .as_table_mut()
                    .expect("section table");
            }
            table.insert(leaf.to_string(), value.clone());
        }
        toml::to_string(&root).expect("serializable configuration")
    }

    /// Markdown table of every key, its default and meaning.
    pub fn reference_table() -> String {
        let mut out = String::from("| key | default | meaning |\n|---|---|---|\n");
        for k in KEYS {
            out.push_str(&format!("| `{}` | `{}` | {} |\n", k.key, k.default, k.doc));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::resolve(&Layers::default()).unwrap();
        assert_eq!(cfg.get_usize("arch.lstm_hidden").unwrap(), 200);
        assert_eq!(cfg.arch(20).unwrap().parameter_count(), 526_820);
        assert_eq!(cfg.window(20).unwrap(), WindowSpec::new(20, 60, 20).unwrap());
        assert_eq!(cfg.get_states("cases.train_states"), vec![(17.4, 15.9), (12.5, 13.5)]);
    }

    #[test]
    fn precedence_file_env_cli() {
        let mut layers = Layers::default();
        layers.file = parse_file_text("profile = \"desk\"\n[train]\nmax_epochs = 30\nbatch_size = 16\n").unwrap();
        layers
            .from_env(|name| match name {
                "WAVEMOTION_TRAIN_MAX_EPOCHS" => Some("40".into()),
                "WAVEMOTION_TRAIN_PATIENCE" => Some("5".into()),
                _ => None,
            })
            .unwrap();
        layers.cli.push(("train.patience".into(), parse_override("train.patience", "7").unwrap()));
        let cfg = RunConfig::resolve(&layers).unwrap();
        assert_eq!(cfg.get_usize("arch.lstm_hidden").unwrap(), 32);
        assert_eq!(cfg.get_usize("train.batch_size").unwrap(), 16);
        assert_eq!(cfg.get_usize("train.max_epochs").unwrap(), 40);
        assert_eq!(cfg.get_usize("train.patience").unwrap(), 7);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut layers = Layers::default();
        layers.cli.push(("profile".into(), parse_override("profile", "desk").unwrap()));
        layers.cli.push(("sweep.test_noise".into(), parse_override("sweep.test_noise", "[0, 0.5]").unwrap()));
        layers.cli.push(("oracle.phase_mode".into(), parse_override("oracle.phase_mode", "zero-phase").unwrap()));
        let cfg = RunConfig::resolve(&layers).unwrap();
        let text = cfg.snapshot();
        let back = RunConfig::resolve(&Layers { file: parse_file_text(&text).unwrap(), ..Layers::default() }).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.snapshot(), text);
    }

    #[test]
    fn bad_settings_are_config_errors() {
        assert!(matches!(parse_override("train.nope", "1"), Err(Error::Config(_))));
        assert!(matches!(parse_override("train.max_epochs", "1.5"), Err(Error::Config(_))));
        assert!(matches!(parse_file_text("[arch]\nlstm_hidden = \"big\"\n"), Err(Error::Config(_))));
        let mut layers = Layers::default();
        layers.cli.push(("profile".into(), Value::String("huge".into())));
        assert!(matches!(RunConfig::resolve(&layers), Err(Error::Config(_))));
        let mut layers = Layers::default();
        layers.cli.push(("cases.test_states".into(), parse_override("cases.test_states", "[[1, 2]]").unwrap()));
        assert!(matches!(RunConfig::resolve(&layers), Err(Error::Config(_))));
    }

    #[test]
    fn scalar_accepted_for_lists() {
        assert_eq!(parse_override("train.horizons", "40").unwrap(), Value::Array(vec![Value::Integer(40)]));
        assert_eq!(parse_override("train.noise_levels", "0").unwrap(), Value::Array(vec![Value::Float(0.0)]));
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("train.max_epochs"), "WAVEMOTION_TRAIN_MAX_EPOCHS");
    }
}
