//! Parsing of catalog ids of the form `head[:sub...][:k=v,k=v]`.

use std::collections::BTreeMap;

use crate::error::{HypError, Result};

/// Splits an id into its head segments and raw `key=value` parameters.
/// Values may themselves contain `:` and `=` (nested ids such as
/// `mu=holder:alpha=0.5`); parameters are separated by `,`.
pub fn parse_id_raw(id: &str) -> Result<(Vec<String>, BTreeMap<String, String>)> {
    let id = id.trim();
    if id.is_empty() {
        return Err(HypError::UnknownId(String::new()));
    }
    let mut head = Vec::new();
    let mut rest = id;
    loop {
        match rest.find(':') {
            Some(pos) if !rest[..pos].contains('=') => {
                head.push(rest[..pos].to_string());
                rest = &rest[pos + 1..];
            }
            _ => break,
        }
    }
    let mut params = BTreeMap::new();
    if rest.contains('=') {
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| HypError::UnknownId(format!("{id} (malformed `{part}`)")))?;
            let k = k.trim().to_string();
            if params.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(HypError::Parameter(format!("{id}: duplicate `{k}`")));
            }
        }
    } else {
        head.push(rest.to_string());
    }
    if head.iter().any(|h| h.is_empty()) {
        return Err(HypError::UnknownId(id.to_string()));
    }
    Ok((head, params))
}

/// Like [`parse_id_raw`] but requires every parameter to be numeric.
pub fn parse_id(id: &str) -> Result<(Vec<String>, BTreeMap<String, f64>)> {
    let (head, raw) = parse_id_raw(id)?;
    let mut params = BTreeMap::new();
    for (k, v) in raw {
        let x: f64 = v
            .parse()
            .map_err(|_| HypError::Parameter(format!("{id}: `{k}={v}` is not a number")))?;
        params.insert(k, x);
    }
    Ok((head, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_parametrized() {
        let (h, p) = parse_id("lipschitz").unwrap();
        assert_eq!(h, vec!["lipschitz"]);
        assert!(p.is_empty());
        let (h, p) = parse_id("eta:loglogm:m=2,eps=0.5").unwrap();
        assert_eq!(h, vec!["eta", "loglogm"]);
        assert_eq!(p["m"], 2.0);
        assert_eq!(p["eps"], 0.5);
    }

    #[test]
    fn nested_values() {
        let (h, p) = parse_id_raw("coeff:resonant:mu=holder:alpha=0.5,c=0.25").unwrap();
        assert_eq!(h, vec!["coeff", "resonant"]);
        assert_eq!(p["mu"], "holder:alpha=0.5");
        assert_eq!(p["c"], "0.25");
    }

    #[test]
    fn malformed() {
        assert!(parse_id("").is_err());
        assert!(parse_id("holder:alpha=x").is_err());
        assert!(parse_id("a:b=1,c").is_err());
        assert!(parse_id("a:b=1,b=2").is_err());
    }
}
