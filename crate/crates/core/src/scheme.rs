//! Transmission scheme labels such as `RS-CF-MMSE-RD` or `BS-ZF`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precoding::{Family, PrecoderKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// All antennas co-located at the centre of the area.
    Bs,
    /// Distributed APs.
    Cf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Structure {
    /// Precoder on the dense estimate; common stream (if any) shared by all users.
    NetworkWide,
    /// Precoder on the masked channel `Ḡ`.
    Sparse,
    /// Per-cluster reduced-dimension precoder.
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scheme {
    pub rate_splitting: bool,
    pub architecture: Architecture,
    pub family: Family,
    pub structure: Structure,
}

impl Scheme {
    pub fn new(
        rate_splitting: bool,
        architecture: Architecture,
        family: Family,
        structure: Structure,
    ) -> Result<Self> {
        let s = Scheme {
            rate_splitting,
            architecture,
            family,
            structure,
        };
        if architecture == Architecture::Bs && structure != Structure::NetworkWide {
            return Err(Error::InvalidParameter(format!(
                "{s}: BS schemes have no clusters"
            )));
        }
        if family == Family::Mf && structure == Structure::Reduced {
            return Err(Error::InvalidParameter(format!(
                "{s}: MF has no reduced-dimension form"
            )));
        }
        Ok(s)
    }

    pub fn private_kind(&self) -> PrecoderKind {
        match self.structure {
            Structure::NetworkWide | Structure::Sparse => self.family.sparse_kind(),
            Structure::Reduced => self
                .family
                .reduced_kind()
                .expect("validated on construction"),
        }
    }

    /// Whether precoders use the AP/user clusters.
    pub fn is_clustered(&self) -> bool {
        self.structure != Structure::NetworkWide
    }

    /// The same scheme with rate-splitting switched off.
    pub fn without_rate_splitting(&self) -> Self {
        Scheme {
            rate_splitting: false,
            ..*self
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Every valid scheme, in a fixed order.
    pub fn all() -> Vec<Scheme> {
        let mut out = Vec::new();
        for rs in [false, true] {
            for arch in [Architecture::Bs, Architecture::Cf] {
                for fam in [Family::Mf, Family::Zf, Family::Mmse] {
                    for st in [
                        Structure::NetworkWide,
                        Structure::Sparse,
                        Structure::Reduced,
                    ] {
                        if let Ok(s) = Scheme::new(rs, arch, fam, st) {
                            out.push(s);
                        }
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rate_splitting {
            f.write_str("RS-")?;
        }
        f.write_str(match self.architecture {
            Architecture::Bs => "BS-",
            Architecture::Cf => "CF-",
        })?;
        f.write_str(self.family.label())?;
        f.write_str(match self.structure {
            Structure::NetworkWide => "",
            Structure::Sparse => "-SP",
            Structure::Reduced => "-RD",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown scheme '{s}'"));
        let upper = s.trim().to_ascii_uppercase();
        let mut parts: Vec<&str> = upper.split('-').collect();
        let rs = parts.first() == Some(&"RS");
        if rs {
            parts.remove(0);
        }
        let arch = match parts.first().copied() {
            Some("BS") => Architecture::Bs,
            Some("CF") => Architecture::Cf,
            _ => return Err(bad()),
        };
        let family = match parts.get(1).copied() {
            Some("MF") => Family::Mf,
            Some("ZF") => Family::Zf,
            Some("MMSE") => Family::Mmse,
            _ => return Err(bad()),
        };
        let structure = match parts.get(2).copied() {
            None => Structure::NetworkWide,
            Some("SP") => Structure::Sparse,
            Some("RD") => Structure::Reduced,
            _ => return Err(bad()),
        };
        if parts.len() > 3 {
            return Err(bad());
        }
        Scheme::new(rs, arch, family, structure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let all = Scheme::all();
        assert_eq!(all.len(), 2 * (3 + 8));
        for s in all {
            assert_eq!(s.label().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn parsing() {
        let s: Scheme = "rs-cf-mmse-rd".parse().unwrap();
        assert!(s.rate_splitting);
        assert_eq!(s.private_kind(), PrecoderKind::RuMmseRd);
        assert_eq!(
            "CF-MF".parse::<Scheme>().unwrap().structure,
            Structure::NetworkWide
        );
        for bad in ["BS-ZF-SP", "CF-MF-RD", "XX-MF", "CF-QR", "CF-MF-SP-X", ""] {
            assert!(bad.parse::<Scheme>().is_err(), "{bad}");
        }
    }
}
