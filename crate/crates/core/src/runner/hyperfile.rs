//! `name = value` text files holding a [`JointHyperParams`].
//!
//! ```text
//! mean_const = -12.5
//! base.family = matern-5/2
//! base.amplitude = 4.2
//! base.length_scales = 0.7, 1.3
//! delta.1.family = matern-5/2
//! delta.1.amplitude = 0.01
//! delta.1.length_scales = 2.0, 2.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::kernels::{JointHyperParams, KernelFamily, KernelParams};
use crate::{Error, Result};

pub fn format_hyperparams(hp: &JointHyperParams) -> String {
    let mut out = String::new();
    writeln!(out, "mean_const = {}", hp.mean_const).unwrap();
    write_kernel(&mut out, "base", &hp.base);
    for (k, d) in hp.deltas.iter().enumerate() {
        write_kernel(&mut out, &format!("delta.{}", k + 1), d);
    }
    out
}

fn write_kernel(out: &mut String, prefix: &str, k: &KernelParams) {
    let scales: Vec<String> = k.length_scales().iter().map(|v| v.to_string()).collect();
    writeln!(out, "{prefix}.family = {}", k.family()).unwrap();
    writeln!(out, "{prefix}.amplitude = {}", k.amplitude()).unwrap();
    writeln!(out, "{prefix}.length_scales = {}", scales.join(", ")).unwrap();
}

pub fn parse_hyperparams(text: &str, path: &Path) -> Result<JointHyperParams> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected 'name = value', got '{line}'")))?;
        let key = key.trim().to_string();
        if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(err(i + 1, format!("duplicate key '{key}'")));
        }
    }
    let end = text.lines().count().max(1);

    let take = |entries: &mut BTreeMap<String, (usize, String)>, key: &str| {
        entries.remove(key).ok_or_else(|| err(end, format!("missing key '{key}'")))
    };
    let (line, v) = take(&mut entries, "mean_const")?;
    let mean_const: f64 = v.parse().map_err(|_| err(line, format!("'{v}' is not a number")))?;
    let kernel = |entries: &mut BTreeMap<String, (usize, String)>, prefix: &str| -> Result<KernelParams> {
        let (fl, family) = take(entries, &format!("{prefix}.family"))?;
        let family: KernelFamily = family.parse().map_err(|e: Error| err(fl, e.to_string()))?;
        let (al, amp) = take(entries, &format!("{prefix}.amplitude"))?;
        let amplitude: f64 = amp.parse().map_err(|_| err(al, format!("'{amp}' is not a number")))?;
        let (ll, scales) = take(entries, &format!("{prefix}.length_scales"))?;
        let length_scales = scales
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| err(ll, format!("'{}' is not a number", s.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        KernelParams::new(family, amplitude, length_scales).map_err(|e| err(al, e.to_string()))
    };
    let base = kernel(&mut entries, "base")?;
    let mut deltas = Vec::new();
    while entries.contains_key(&format!("delta.{}.family", deltas.len() + 1)) {
        deltas.push(kernel(&mut entries, &format!("delta.{}", deltas.len() + 1))?);
    }
    if let Some((key, (line, _))) = entries.into_iter().next() {
        return Err(err(line, format!("unexpected key '{key}'")));
    }
    JointHyperParams::new(mean_const, base, deltas).map_err(|e| err(end, e.to_string()))
}

pub fn load_hyperparams(path: impl AsRef<Path>) -> Result<JointHyperParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hyperparams(&text, path)
}

pub fn save_hyperparams(hp: &JointHyperParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_hyperparams(hp)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> JointHyperParams {
        JointHyperParams::new(
            -0.1 / 3.0,
            KernelParams::new(KernelFamily::Matern52, 1234.5678901234, vec![0.1, 2.0 / 3.0]).unwrap(),
            vec![
                KernelParams::new(KernelFamily::SquaredExponential, 1e-7, vec![3.0, 1.0 / 7.0]).unwrap(),
                KernelParams::isotropic(KernelFamily::Matern52, 0.5, 0.25, 2).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let text = format_hyperparams(&hp());
        assert_eq!(parse_hyperparams(&text, Path::new("hp")).unwrap(), hp());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hp.txt");
        save_hyperparams(&hp(), &path).unwrap();
        assert_eq!(load_hyperparams(&path).unwrap(), hp());
    }

    #[test]
    fn reports_bad_lines() {
        let text = format_hyperparams(&hp()).replace("base.amplitude = 1234.5678901234", "base.amplitude = lots");
        match parse_hyperparams(&text, Path::new("hp")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_hyperparams("mean_const = 1\n", Path::new("hp")).is_err());
        let extra = format!("{}surprise = 1\n", format_hyperparams(&hp()));
        assert!(parse_hyperparams(&extra, Path::new("hp")).is_err());
        let wrong_dim = format_hyperparams(&hp()).replace("delta.2.length_scales = 0.25, 0.25", "delta.2.length_scales = 0.25");
        assert!(parse_hyperparams(&wrong_dim, Path::new("hp")).is_err());
    }
}
