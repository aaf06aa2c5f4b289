//! Arena configuration and its flat `key=value` file format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of a machine pointer, which is also the width of one spray slot and
/// the range of the injected random offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub enum PointerWidth {
    /// 32-bit pointers.
    Four,
    /// 64-bit pointers.
    Eight,
}

impl PointerWidth {
    /// Width in bytes.
    pub const fn bytes(self) -> u64 {
        match self {
            PointerWidth::Four => 4,
            PointerWidth::Eight => 8,
        }
    }

    /// Width in bytes as a `usize`, for indexing.
    pub const fn usize(self) -> usize {
        self.bytes() as usize
    }
}

impl TryFrom<u64> for PointerWidth {
    type Error = ConfigError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(PointerWidth::Four),
            8 => Ok(PointerWidth::Eight),
            other => Err(ConfigError::PointerWidth(other)),
        }
    }
}

impl From<PointerWidth> for u64 {
    fn from(w: PointerWidth) -> u64 {
        w.bytes()
    }
}

impl fmt::Display for PointerWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bytes())
    }
}

/// Errors raised while building or parsing an [`ArenaConfig`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("pointer width must be 4 or 8, got {0}")]
    PointerWidth(u64),
    #[error("{field} must be a power of two, got {value}")]
    NotPowerOfTwo { field: &'static str, value: u64 },
    #[error("cache line ({cache_line}) must be smaller than the page size ({page_size})")]
    LineNotBelowPage { cache_line: u64, page_size: u64 },
    #[error("cache line must be at least 16 bytes and hold two pointers, got {0}")]
    LineTooSmall(u64),
    #[error("address space must be 32 or 64 bits, got {0}")]
    AddressSpaceBits(u64),
    #[error("arena capacity must be at least one page ({page_size} bytes), got {capacity}")]
    Capacity { capacity: u64, page_size: u64 },
    #[error("base address {0:#x} is not page aligned")]
    UnalignedBase(u64),
    #[error("arena [{base:#x}, +{capacity:#x}) does not fit a {bits}-bit address space")]
    AddressSpaceOverflow { base: u64, capacity: u64, bits: u32 },
    #[error("backed mode cannot model a {0}-bit address space on this host")]
    BackedAddressSpace(u32),
    #[error("backing region of {0} bytes could not be reserved")]
    BackingUnavailable(u64),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
}

/// Parameters of one arena.
///
/// Field names double as the keys of the `key=value` config file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaConfig {
    pub pointer_width: PointerWidth,
    pub cache_line: u64,
    pub page_size: u64,
    /// `false` yields a word-aligned baseline with no padding.
    pub randomize: bool,
    /// Exclude byte-shift-independent addresses. Only has an effect when
    /// `address_space_bits == 32`.
    pub filter_bsi: bool,
    /// Also exclude half-period addresses such as `0x35343534`.
    pub filter_strict: bool,
    pub address_space_bits: u32,
    pub rng_seed: u64,
    pub arena_capacity: u64,
    /// Manage a real memory region instead of a purely virtual range.
    pub backed: bool,
    /// First address of a simulated arena. `None` picks a default for the
    /// address-space width. Ignored in backed mode.
    pub base_address: Option<u64>,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            pointer_width: PointerWidth::Eight,
            cache_line: 64,
            page_size: 4096,
            randomize: true,
            filter_bsi: false,
            filter_strict: false,
            address_space_bits: 64,
            rng_seed: 1,
            arena_capacity: 256 << 20,
            backed: false,
            base_address: None,
        }
    }
}

pub(crate) const DEFAULT_BASE_32: u64 = 0x1000_0000;
pub(crate) const DEFAULT_BASE_64: u64 = 0x0000_1000_0000_0000;

impl ArenaConfig {
    /// A simulated 32-bit arena with 4-byte pointers and BSI filtering on.
    pub fn filtered_32() -> Self {
        Self {
            pointer_width: PointerWidth::Four,
            address_space_bits: 32,
            filter_bsi: true,
            ..Self::default()
        }
    }

    /// Checks every invariant the arena relies on.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("cache_line", self.cache_line),
            ("page_size", self.page_size),
        ] {
            if !value.is_power_of_two() {
                return Err(ConfigError::NotPowerOfTwo { field, value });
            }
        }
        if self.cache_line >= self.page_size {
            return Err(ConfigError::LineNotBelowPage {
                cache_line: self.cache_line,
                page_size: self.page_size,
            });
        }
        if self.cache_line < 16 || self.cache_line < 2 * self.pointer_width.bytes() {
            return Err(ConfigError::LineTooSmall(self.cache_line));
        }
        if self.address_space_bits != 32 && self.address_space_bits != 64 {
            return Err(ConfigError::AddressSpaceBits(
                self.address_space_bits as u64,
            ));
        }
        if self.arena_capacity < self.page_size {
            return Err(ConfigError::Capacity {
                capacity: self.arena_capacity,
                page_size: self.page_size,
            });
        }
        if self.backed {
            if self.address_space_bits as usize != usize::BITS as usize {
                return Err(ConfigError::BackedAddressSpace(self.address_space_bits));
            }
        } else {
            let base = self.base();
            if !base.is_multiple_of(self.page_size) {
                return Err(ConfigError::UnalignedBase(base));
            }
            let fits = match self.address_space_bits {
                32 => base
                    .checked_add(self.arena_capacity)
                    .is_some_and(|end| end <= 1 << 32),
                _ => base.checked_add(self.arena_capacity).is_some(),
            };
            if !fits {
                return Err(ConfigError::AddressSpaceOverflow {
                    base,
                    capacity: self.arena_capacity,
                    bits: self.address_space_bits,
                });
            }
        }
        Ok(())
    }

    /// Base address of a simulated arena.
    pub fn base(&self) -> u64 {
        self.base_address
            .unwrap_or(if self.address_space_bits == 32 {
                DEFAULT_BASE_32
            } else {
                DEFAULT_BASE_64
            })
    }

    /// Bytes of padding reserved per chunk: the pointer width when
    /// randomizing, zero for the baseline.
    pub fn padding(&self) -> u64 {
        if self.randomize {
            self.pointer_width.bytes()
        } else {
            0
        }
    }

    /// BSI filtering is active only for 32-bit address spaces.
    pub fn filter_active(&self) -> bool {
        self.filter_bsi && self.address_space_bits == 32
    }

    /// Renders the config in the `key=value` file format.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        line("pointer_width", self.pointer_width.to_string());
        line("cache_line", self.cache_line.to_string());
        line("page_size", self.page_size.to_string());
        line("randomize", self.randomize.to_string());
        line("filter_bsi", self.filter_bsi.to_string());
        line("filter_strict", self.filter_strict.to_string());
        line("address_space_bits", self.address_space_bits.to_string());
        line("rng_seed", self.rng_seed.to_string());
        line("arena_capacity", self.arena_capacity.to_string());
        line("backed", self.backed.to_string());
        if let Some(base) = self.base_address {
            line("base_address", format!("{base:#x}"));
        }
        out
    }

    /// Parses a `key=value` config. Unlisted keys keep their defaults; `#`
    /// starts a comment.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected key=value, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let syntax = |message: String| ConfigError::Syntax { line, message };
            match key {
                "pointer_width" => {
                    cfg.pointer_width = PointerWidth::try_from(parse_u64(value).map_err(syntax)?)?
                }
                "cache_line" => cfg.cache_line = parse_u64(value).map_err(syntax)?,
                "page_size" => cfg.page_size = parse_u64(value).map_err(syntax)?,
                "randomize" => cfg.randomize = parse_bool(value).map_err(syntax)?,
                "filter_bsi" => cfg.filter_bsi = parse_bool(value).map_err(syntax)?,
                "filter_strict" => cfg.filter_strict = parse_bool(value).map_err(syntax)?,
                "address_space_bits" => {
                    let bits = parse_u64(value).map_err(syntax)?;
                    cfg.address_space_bits =
                        u32::try_from(bits).map_err(|_| ConfigError::AddressSpaceBits(bits))?;
                }
                "rng_seed" => cfg.rng_seed = parse_u64(value).map_err(syntax)?,
                "arena_capacity" => cfg.arena_capacity = parse_u64(value).map_err(syntax)?,
                "backed" => cfg.backed = parse_bool(value).map_err(syntax)?,
                "base_address" => cfg.base_address = Some(parse_u64(value).map_err(syntax)?),
                other => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: other.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for ArenaConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_kv(s)
    }
}

/// Parses a decimal or `0x`-prefixed hexadecimal integer.
pub(crate) fn parse_u64(value: &str) -> Result<u64, String> {
    let value = value.replace('_', "");
    let parsed = match value
        .strip_prefix("0x")
        .or_else(|| value.strip_prefix("0X"))
    {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => value.parse(),
    };
    parsed.map_err(|e| format!("invalid integer `{value}`: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid boolean `{value}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ArenaConfig::default().validate().unwrap();
        ArenaConfig::filtered_32().validate().unwrap();
    }

    #[test]
    fn line_equal_to_page_rejected() {
        let cfg = ArenaConfig {
            cache_line: 4096,
            ..ArenaConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::LineNotBelowPage { .. })
        ));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let cfg = ArenaConfig {
            cache_line: 48,
            ..ArenaConfig::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::NotPowerOfTwo {
                field: "cache_line",
                value: 48
            })
        );
    }

    #[test]
    fn zero_capacity_rejected() {
        let cfg = ArenaConfig {
            arena_capacity: 0,
            ..ArenaConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::Capacity { .. })));
    }

    #[test]
    fn arena_must_fit_32_bits() {
        let cfg = ArenaConfig {
            base_address: Some(0xF000_0000),
            arena_capacity: 0x2000_0000,
            ..ArenaConfig::filtered_32()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::AddressSpaceOverflow { .. })
        ));
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ArenaConfig {
            cache_line: 128,
            rng_seed: 42,
            base_address: Some(0x1111_0000),
            ..ArenaConfig::filtered_32()
        };
        assert_eq!(ArenaConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn kv_comments_and_hex() {
        let cfg: ArenaConfig =
            "# test\npointer_width = 4\naddress_space_bits=32 # narrow\nrng_seed=0x10\n"
                .parse()
                .unwrap();
        assert_eq!(cfg.pointer_width, PointerWidth::Four);
        assert_eq!(cfg.rng_seed, 16);
    }

    #[test]
    fn kv_unknown_key() {
        assert_eq!(
            ArenaConfig::from_kv("cacheline=64"),
            Err(ConfigError::UnknownKey {
                line: 1,
                key: "cacheline".into()
            })
        );
    }

    #[test]
    fn kv_bad_width() {
        assert_eq!(
            ArenaConfig::from_kv("pointer_width=6"),
            Err(ConfigError::PointerWidth(6))
        );
    }
}
