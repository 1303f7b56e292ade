//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every operation takes plain numbers or comma-separated text and returns a
//! JSON string, so the page needs no bundler. The `*_json` functions carry the
//! logic and are what the native tests exercise.

use curconmix::autodiff::{Tape, Tensor};
use curconmix::datagen::{generate_dataset, SyntheticConfig};
use curconmix::metrics::average_precision_class;
use curconmix::mrtt::{blend, fuse_multires};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| format!("{what}: cannot parse `{p}`")))
        .collect()
}

/// One synthetic episode of the desk preset: per-frame active triplets and
/// observation norms.
pub fn generate_episode_json(seed: u64, noise: f64, zipf: f64, dwell: f64) -> Result<String, String> {
    let cfg = SyntheticConfig { noise, zipf, dwell, episodes: 4, ..SyntheticConfig::desk() };
    let ds = generate_dataset(&cfg, seed).map_err(|e| e.to_string())?;
    let ep = &ds.episodes[0];
    let frames: Vec<Vec<usize>> = ep.labels.iter().map(|l| l.active().collect()).collect();
    let (t, _) = ep.obs.dims2().map_err(|e| e.to_string())?;
    let norms: Vec<f64> = (0..t).map(|i| ep.obs.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let names: Vec<String> = (0..ds.vocab.num_classes()).map(|c| ds.vocab.triplet_name(c)).collect();
    Ok(json!({ "triplets": names, "frames": frames, "obs_norm": norms }).to_string())
}

/// AP of one class from scores and 0/1 labels.
pub fn average_precision_json(scores: &str, labels: &str) -> Result<String, String> {
    let s: Vec<f64> = parse_list(scores, "scores")?;
    let l: Vec<u8> = parse_list(labels, "labels")?;
    if s.len() != l.len() {
        return Err(format!("{} scores but {} labels", s.len(), l.len()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err("scores must be finite".into());
    }
    let flags: Vec<bool> = l.iter().map(|&v| v != 0).collect();
    let ap = average_precision_class(&s, &flags);
    Ok(json!({ "ap": ap, "positives": flags.iter().filter(|&&b| b).count(), "frames": s.len() }).to_string())
}

/// Pools a 1-D signal at every stride, upsamples back, fuses the pathways
/// with `softmax(logits)` and blends with the raw signal using `β`.
pub fn multires_json(signal: &str, strides: &str, logits: &str, beta: f64) -> Result<String, String> {
    let x: Vec<f64> = parse_list(signal, "signal")?;
    let ks: Vec<usize> = parse_list(strides, "strides")?;
    let w: Vec<f64> = parse_list(logits, "logits")?;
    if ks.is_empty() || ks.contains(&0) {
        return Err("strides must be positive".into());
    }
    if w.len() != ks.len() {
        return Err(format!("{} strides but {} logits", ks.len(), w.len()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err("beta must lie in [0, 1]".into());
    }
    let t = x.len();
    let run = || -> curconmix::Result<serde_json::Value> {
        let mut tape = Tape::new();
        let xs = tape.constant(Tensor::matrix(t, 1, x.clone())?);
        let mask = vec![true; t];
        let mut pooled = Vec::new();
        let mut ups = Vec::new();
        for &k in &ks {
            let p = tape.masked_mean_pool(xs, k, &mask)?;
            pooled.push(tape.value(p).data().to_vec());
            ups.push(tape.upsample(p, t)?);
        }
        let wv = tape.constant(Tensor::matrix(1, ks.len(), w.clone())?);
        let fused = fuse_multires(&mut tape, &ups, wv)?;
        let gamma = tape.softmax(wv)?;
        let b = tape.constant(Tensor::scalar(beta));
        let out = blend(&mut tape, xs, fused, b)?;
        Ok(json!({
            "pooled": pooled,
            "upsampled": ups.iter().map(|&u| tape.value(u).data().to_vec()).collect::<Vec<_>>(),
            "fused": tape.value(fused).data(),
            "blended": tape.value(out).data(),
            "gamma": tape.value(gamma).data(),
        }))
    };
    run().map(|v| v.to_string()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn generate_episode(seed: u32, noise: f64, zipf: f64, dwell: f64) -> Result<String, JsValue> {
    generate_episode_json(seed as u64, noise, zipf, dwell).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn average_precision(scores: &str, labels: &str) -> Result<String, JsValue> {
    average_precision_json(scores, labels).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn multires(signal: &str, strides: &str, logits: &str, beta: f64) -> Result<String, JsValue> {
    multires_json(signal, strides, logits, beta).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn episode_has_labels_per_frame() {
        let v: Value = serde_json::from_str(&generate_episode_json(1, 0.3, 1.2, 8.0).unwrap()).unwrap();
        assert_eq!(v["frames"].as_array().unwrap().len(), 64);
        assert_eq!(v["triplets"].as_array().unwrap().len(), 12);
        assert!(generate_episode_json(1, -1.0, 1.2, 8.0).is_err());
    }

    #[test]
    fn ap_values() {
        let v: Value = serde_json::from_str(&average_precision_json("0.9, 0.8, 0.1", "1 0 1").unwrap()).unwrap();
        assert!((v["ap"].as_f64().unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let v: Value = serde_json::from_str(&average_precision_json("0.5,0.5", "0,0").unwrap()).unwrap();
        assert!(v["ap"].is_null());
        assert!(average_precision_json("1,2", "1").is_err());
    }

    #[test]
    fn multires_constant_signal_passes_through() {
        let s = vec!["2.5"; 13].join(",");
        let v: Value = serde_json::from_str(&multires_json(&s, "4,5,6", "0.3,-1,2", 0.4).unwrap()).unwrap();
        for x in v["blended"].as_array().unwrap() {
            assert!((x.as_f64().unwrap() - 2.5).abs() < 1e-12);
        }
        let lens: Vec<usize> = v["pooled"].as_array().unwrap().iter().map(|p| p.as_array().unwrap().len()).collect();
        assert_eq!(lens, vec![4, 3, 3]);
        let g: f64 = v["gamma"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((g - 1.0).abs() < 1e-12);
        assert!(multires_json(&s, "4,5", "1", 0.5).is_err());
        assert!(multires_json(&s, "4", "1", 1.5).is_err());
    }
}
