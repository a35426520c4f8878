//! Integer grids: `4`, `1..15` (inclusive) and comma-separated mixtures such
//! as `1..5,10,20`.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid(pub Vec<usize>);

impl Grid {
    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            if part.is_empty() {
                return Err(format!("empty grid element in {s:?}"));
            }
            match part.split_once("..") {
                Some((lo, hi)) => {
                    let lo: usize = lo
                        .trim()
                        .parse()
                        .map_err(|_| format!("bad range start in {part:?}"))?;
                    let hi: usize = hi
                        .trim()
                        .trim_start_matches('=')
                        .parse()
                        .map_err(|_| format!("bad range end in {part:?}"))?;
                    if lo > hi {
                        return Err(format!("empty range {part:?}"));
                    }
                    out.extend(lo..=hi);
                }
                None => out.push(part.parse().map_err(|_| format!("bad integer {part:?}"))?),
            }
        }
        Ok(Grid(out))
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!("1..4".parse::<Grid>().unwrap().0, vec![1, 2, 3, 4]);
        assert_eq!("1..=2".parse::<Grid>().unwrap().0, vec![1, 2]);
        assert_eq!("7".parse::<Grid>().unwrap().0, vec![7]);
        assert_eq!("1..2, 5".parse::<Grid>().unwrap().0, vec![1, 2, 5]);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "3..1", "a", "1..", "1,,2"] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }
}
