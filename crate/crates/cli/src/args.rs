//! Value grammars for the command-line flags.

use std::str::FromStr;

use magging::aggregate::{LeaveOut, Scheme, StackConstraint, StackingConfig};
use magging::estimators::{EstimatorKind, EstimatorSpec};
use magging::groups::{consecutive_blocks, known_groups, random_subsample, Grouping};

/// `known | blocks:G | subsample:G,m`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupArg {
    Known,
    Blocks(usize),
    Subsample(usize, usize),
}

impl GroupArg {
    /// Builds the grouping for `n` samples. `labels` is the `group` column
    /// when the input has one.
    pub fn build(&self, n: usize, labels: Option<&[i64]>, seed: u64) -> Result<Grouping, String> {
        let built = match *self {
            GroupArg::Known => {
                let labels = labels.ok_or("--groups known needs a 'group' column in the input")?;
                known_groups(labels)
            }
            GroupArg::Blocks(g) => consecutive_blocks(n, g),
            GroupArg::Subsample(g, m) => random_subsample(n, g, m, seed),
        };
        built.map_err(|e| e.to_string())
    }
}

fn count(s: &str, what: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("{what} must be a non-negative integer, got '{s}'"))
}

fn real(s: &str, what: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("{what} must be a finite number, got '{s}'")),
    }
}

impl FromStr for GroupArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        match (head, rest) {
            ("known", "") => Ok(GroupArg::Known),
            ("blocks", g) if !g.is_empty() => Ok(GroupArg::Blocks(count(g, "G")?)),
            ("subsample", gm) => {
                let (g, m) = gm.split_once(',').ok_or("expected subsample:G,m")?;
                Ok(GroupArg::Subsample(count(g, "G")?, count(m, "m")?))
            }
            _ => Err(format!("unknown group spec '{s}'; expected known, blocks:G or subsample:G,m")),
        }
    }
}

/// `ols | ridge:λ | lasso | lasso:λ`
pub fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    let (head, rest) = s.split_once(':').map_or((s, None), |(h, r)| (h, Some(r)));
    match (head, rest) {
        ("ols", None) => Ok(EstimatorKind::Ols),
        ("ridge", Some(l)) => Ok(EstimatorKind::Ridge { lambda: real(l, "ridge λ")? }),
        ("lasso", None) => Ok(EstimatorKind::Lasso { lambda: None }),
        ("lasso", Some(l)) => Ok(EstimatorKind::Lasso { lambda: Some(real(l, "lasso λ")?) }),
        _ => Err(format!("unknown estimator '{s}'; expected ols, ridge:λ or lasso[:λ]")),
    }
}

pub fn estimator_spec(kind: EstimatorKind, intercept: bool, standardize: bool) -> Result<EstimatorSpec, String> {
    let spec = EstimatorSpec { kind, intercept, standardize, ..Default::default() };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// `mean | magging | pooled | stack:convex | stack:sign | stack:ridge:s`,
/// stacking optionally suffixed with `:loo` (default) or `:oob`.
pub fn parse_scheme(s: &str) -> Result<Scheme, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let scheme = match parts.as_slice() {
        ["mean"] => Scheme::Mean,
        ["magging"] => Scheme::Magging,
        ["pooled"] => Scheme::Pooled,
        ["stack", rest @ ..] => {
            let (constraint, tail) = match rest {
                ["convex", tail @ ..] => (StackConstraint::Convex, tail),
                ["sign", tail @ ..] => (StackConstraint::Sign, tail),
                ["ridge", r, tail @ ..] => (StackConstraint::Ridge { radius: real(r, "stacking radius")? }, tail),
                _ => return Err(format!("unknown stacking constraint in '{s}'; expected convex, sign or ridge:s")),
            };
            let leaveout = match tail {
                [] | ["loo"] => LeaveOut::LeaveOneOut,
                ["oob"] => LeaveOut::OutOfBag,
                _ => return Err(format!("unknown leave-out scheme in '{s}'; expected loo or oob")),
            };
            let cfg = StackingConfig { constraint, leaveout };
            cfg.validate().map_err(|e| e.to_string())?;
            Scheme::Stacked(cfg)
        }
        _ => return Err(format!("unknown scheme '{s}'; expected mean, magging, pooled or stack:…")),
    };
    Ok(scheme)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_specs() {
        assert_eq!("known".parse::<GroupArg>(), Ok(GroupArg::Known));
        assert_eq!("blocks:4".parse::<GroupArg>(), Ok(GroupArg::Blocks(4)));
        assert_eq!("subsample:50,60".parse::<GroupArg>(), Ok(GroupArg::Subsample(50, 60)));
        for bad in ["blocks", "blocks:x", "subsample:5", "clusters:3", "known:2"] {
            assert!(bad.parse::<GroupArg>().is_err(), "{bad}");
        }
    }

    #[test]
    fn known_groups_need_labels() {
        assert!(GroupArg::Known.build(4, None, 0).is_err());
        let g = GroupArg::Known.build(4, Some(&[1, 0, 1, 0]), 0).unwrap();
        assert_eq!(g.groups, vec![vec![1, 3], vec![0, 2]]);
        assert!(GroupArg::Blocks(5).build(4, None, 0).is_err());
    }

    #[test]
    fn estimators() {
        assert_eq!(parse_estimator("ols"), Ok(EstimatorKind::Ols));
        assert_eq!(parse_estimator("ridge:0.5"), Ok(EstimatorKind::Ridge { lambda: 0.5 }));
        assert_eq!(parse_estimator("lasso"), Ok(EstimatorKind::Lasso { lambda: None }));
        assert_eq!(parse_estimator("lasso:0.1"), Ok(EstimatorKind::Lasso { lambda: Some(0.1) }));
        for bad in ["ridge", "ols:1", "lasso:inf", "svm"] {
            assert!(parse_estimator(bad).is_err(), "{bad}");
        }
        assert!(estimator_spec(EstimatorKind::Ridge { lambda: -1.0 }, false, false).is_err());
    }

    #[test]
    fn schemes_round_trip_through_display() {
        for s in ["mean", "magging", "pooled", "stack:convex:loo", "stack:sign:oob", "stack:ridge:2:loo"] {
            assert_eq!(parse_scheme(s).unwrap().to_string(), s);
        }
        assert_eq!(parse_scheme("stack:convex").unwrap().to_string(), "stack:convex:loo");
        for bad in ["stack", "stack:ridge", "stack:ridge:-1", "stack:convex:kfold", "median"] {
            assert!(parse_scheme(bad).is_err(), "{bad}");
        }
    }
}
