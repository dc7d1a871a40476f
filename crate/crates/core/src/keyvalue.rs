//! Flat `key = value` configuration structs with documented keys.

use std::fmt;
use std::str::FromStr;

/// A number that may be left for the dataset to supply.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Auto(pub Option<f64>);

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("auto"),
        }
    }
}

impl FromStr for Auto {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(Auto(None))
        } else {
            s.parse().map(|v| Auto(Some(v)))
        }
    }
}

/// One documented configuration key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: String,
    pub unit: &'static str,
    pub help: &'static str,
}

macro_rules! key_value_config {
    ($(#[$sm:meta])* pub struct $S:ident { $( $name:ident : $ty:ty = $default:expr, $unit:literal, $help:literal; )* }) => {
        $(#[$sm])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $S {
            $( pub $name: $ty, )*
        }

        impl Default for $S {
            fn default() -> Self {
                Self { $( $name: $default.into(), )* }
            }
        }

        impl $S {
            /// Every key in declaration order.
            pub fn keys() -> Vec<$crate::keyvalue::KeySpec> {
                let d = Self::default();
                vec![$(
                    $crate::keyvalue::KeySpec {
                        key: stringify!($name),
                        default: d.$name.to_string(),
                        unit: $unit,
                        help: $help,
                    },
                )*]
            }

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> $crate::error::Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.parse::<$ty>().map_err(|e| {
                            $crate::error::Error::Config(format!("{key}: cannot parse '{value}': {e}"))
                        })?;
                    } )*
                    _ => return Err($crate::error::Error::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            /// Effective value of every key, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($name), self.$name.to_string()), )*]
            }

            /// Defaults overridden by the `key = value` lines of `text`.
            pub fn parse(text: &str) -> $crate::error::Result<Self> {
                let mut cfg = Self::default();
                for (k, v) in $crate::dataset::parse_key_values(text)? {
                    cfg.set(&k, &v)?;
                }
                Ok(cfg)
            }

            pub fn load(path: impl AsRef<std::path::Path>) -> $crate::error::Result<Self> {
                let path = path.as_ref();
                let text = std::fs::read_to_string(path).map_err(|e| {
                    $crate::error::Error::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                Self::parse(&text)
            }

            /// Canonical text form; parses back to the same value.
            pub fn to_text(&self) -> String {
                self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
            }

            /// Every key with its default and unit.
            pub fn help_text() -> String {
                $crate::keyvalue::help_text(&Self::keys())
            }
        }
    };
}

pub(crate) use key_value_config;

pub fn help_text(keys: &[KeySpec]) -> String {
    let mut s = String::from("configuration keys (default, unit):\n");
    for k in keys {
        let default = if k.default.is_empty() { "<none>" } else { &k.default };
        let unit = if k.unit.is_empty() { "-" } else { k.unit };
        s.push_str(&format!("  {:<24} {:<10} [{}]  {}\n", k.key, default, unit, k.help));
    }
    s
}

