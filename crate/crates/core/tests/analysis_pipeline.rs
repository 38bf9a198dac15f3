mod common;

use std::fs;

use keypoint_attention::analysis::{layer_profile, per_patch_mean_theta, AnalysisParams, PatchAttention, Weighting};
use keypoint_attention::bundle::{AttentionBundle, BundleMeta};
use keypoint_attention::image::{encode_png_rgb, RgbImage};
use keypoint_attention::patch::PatchStats;
use keypoint_attention::report::{cmd_analyze, ModelSource, RunConfig};
use keypoint_attention::tensor::Tensor;
use keypoint_attention::vit::{AttentionRecord, ViTConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimal reader for the attention file: returns `(name, dims, f32 values)`
/// for every non-meta entry.
fn read_vslt(bytes: &[u8]) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    assert_eq!(&bytes[..4], b"VSLT");
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    assert_eq!(u32_at(4), 1);
    let count = u32_at(8);
    let mut pos = 12;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        let name = String::from_utf8(bytes[pos + 2..pos + 2 + len].to_vec()).unwrap();
        pos += 2 + len;
        let rank = bytes[pos] as usize;
        pos += 1;
        let dims: Vec<usize> = (0..rank).map(|k| u32_at(pos + 4 * k)).collect();
        pos += 4 * rank;
        let n: usize = dims.iter().product();
        if name == "meta" {
            pos += n;
            continue;
        }
        let vals = (0..n)
            .map(|k| f32::from_le_bytes(bytes[pos + 4 * k..pos + 4 * k + 4].try_into().unwrap()))
            .collect();
        pos += 4 * n;
        out.push((name, dims, vals));
    }
    assert_eq!(pos, bytes.len());
    out
}

fn write_input(dir: &std::path::Path, size: usize, seed: u64) -> std::path::PathBuf {
    let img = RgbImage::from_gray(&common::textured(size, &mut ChaCha8Rng::seed_from_u64(seed)));
    let path = dir.join("input.png");
    fs::write(&path, encode_png_rgb(&img)).unwrap();
    path
}

fn parse_na(s: &str) -> Option<f64> {
    (s != "NA").then(|| s.parse().unwrap())
}

#[test]
fn toy_run_matches_recomputation_from_the_attention_file() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), 64, 21);
    let mut cfg = RunConfig::new(&input, tmp.path().join("out"));
    cfg.model = Some(ModelSource::Internal { config: ViTConfig::default(), seed: 5 });
    let report = cmd_analyze(&cfg).unwrap();

    let counts: Vec<u32> = fs::read_to_string(cfg.out_dir.join("patch_stats.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts, report.prepared.stats.counts());
    assert!(counts.iter().any(|&c| c > 0) && counts.contains(&0));

    let entries = read_vslt(&fs::read(cfg.out_dir.join("attention.vslt")).unwrap());
    assert_eq!(entries.len(), 16);
    let csv = fs::read_to_string(cfg.out_dir.join("profile.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 16);
    for (name, dims, vals) in &entries {
        assert_eq!(dims, &vec![64, 64]);
        let layer: usize = name[6..name.find("/H").unwrap()].parse().unwrap();
        let head: usize = name[name.find("/H").unwrap() + 2..].parse().unwrap();
        let mat: common::Mat = vals.chunks(64).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let want = common::brute_scores(&mat, &counts, 1.0, true);
        let focus = mat.iter().map(|r| common::entropy(r)).sum::<f64>() / 64.0;
        let row = rows.iter().find(|r| r[0] == layer.to_string() && r[1] == head.to_string()).unwrap();
        let close = |got: &str, want: Option<f64>| match (parse_na(got), want) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        assert!(close(row[2], want.kk) && close(row[3], want.kn), "{name}: {row:?} vs {want:?}");
        assert!(close(row[4], want.nk) && close(row[5], want.nn), "{name}: {row:?} vs {want:?}");
        assert!((row[6].parse::<f64>().unwrap() - focus).abs() < 1e-9);
        assert_eq!(row[7].parse::<usize>().unwrap(), want.undefined);
    }
}

#[test]
fn csv_round_trip_equals_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), 64, 22);
    let report = cmd_analyze(&RunConfig::new(&input, tmp.path().join("out"))).unwrap();
    let csv = fs::read_to_string(tmp.path().join("out/profile.csv")).unwrap();
    for (line, h) in csv.lines().skip(1).zip(&report.profile.heads) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(parse_na(f[2]), h.global.theta_kk);
        assert_eq!(parse_na(f[4]), h.global.theta_nk);
        assert_eq!(f[6].parse::<f64>().unwrap(), h.focus.delta);
    }
    let theta: Vec<f64> = fs::read_to_string(tmp.path().join("out/mean_theta.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(theta, report.mean_theta);
}

#[test]
fn uniform_bundle_has_closed_form_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), 64, 23);
    let meta = BundleMeta { image_size: 64, patch_size: 8, layers: 3, heads: 2, cls_token: false };
    let recs = (0..6)
        .map(|k| AttentionRecord { layer: k / 2, head: k % 2, alpha: Tensor::from_rows(64, 64, vec![1.0 / 64.0; 4096]) })
        .collect();
    let path = tmp.path().join("uniform.vslt");
    AttentionBundle::new(meta, recs).unwrap().save(&path).unwrap();
    let mut cfg = RunConfig::new(&input, tmp.path().join("out"));
    cfg.model = Some(ModelSource::Bundle(path));
    let report = cmd_analyze(&cfg).unwrap();
    let counts = report.prepared.stats.counts();
    let key: f64 = counts.iter().map(|&c| c as f64).sum();
    let non = counts.iter().filter(|&&c| c == 0).count() as f64;
    let expect = key / (non + key);
    for h in &report.profile.heads {
        assert!((h.focus.delta - 64f64.ln()).abs() < 1e-12);
        assert!((h.global.theta_kk.unwrap() - expect).abs() < 1e-12);
        assert!((h.global.theta_nk.unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn cls_bundle_is_sliced() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_input(tmp.path(), 32, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let meta = BundleMeta { image_size: 32, patch_size: 8, layers: 1, heads: 1, cls_token: true };
    let full = common::random_attention_matrix(&mut rng, 17);
    let rec = AttentionRecord {
        layer: 0,
        head: 0,
        alpha: Tensor::from_rows(17, 17, full.concat().iter().map(|&v| v as f32).collect()),
    };
    let path = tmp.path().join("cls.vslt");
    AttentionBundle::new(meta, vec![rec.clone()]).unwrap().save(&path).unwrap();
    let mut cfg = RunConfig::new(&input, tmp.path().join("out"));
    cfg.model = Some(ModelSource::Bundle(path));
    let report = cmd_analyze(&cfg).unwrap();
    assert!(report.stages.is_none());
    let sub: common::Mat = (1..17).map(|i| (1..17).map(|j| rec.alpha.at(i, j) as f64).collect()).collect();
    let want = common::brute_scores(&sub, report.prepared.stats.counts(), 1.0, true);
    assert_eq!(report.profile.heads[0].global.undefined_count, want.undefined);
    assert_eq!(report.profile.heads[0].global.theta_nk.is_some(), want.nk.is_some());
    if let (Some(a), Some(b)) = (report.profile.heads[0].global.theta_nk, want.nk) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mean_theta_over_sixteen_heads_matches_accumulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 16;
    let t: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let stats = PatchStats::from_counts(t.clone());
    let mats: Vec<common::Mat> = (0..16).map(|_| common::random_attention_matrix(&mut rng, n)).collect();
    let heads: Vec<PatchAttention> = mats.iter().map(|m| PatchAttention::new(n, m.concat()).unwrap()).collect();
    let refs: Vec<&PatchAttention> = heads.iter().collect();
    for gamma in [1.0, 1.5] {
        let params = AnalysisParams { gamma, weighting: Weighting::Weighted };
        let got = per_patch_mean_theta(&refs, &stats, &params).unwrap();
        let mut sum = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for m in &mats {
            for (i, v) in common::brute_scores(m, &t, gamma, true).weighted.iter().enumerate() {
                if let Some(v) = v {
                    sum[i] += v;
                    cnt[i] += 1;
                }
            }
        }
        for i in 0..n {
            let want = if cnt[i] == 0 { 0.0 } else { sum[i] / cnt[i] as f64 };
            assert!((got[i] - want).abs() < 1e-12, "gamma {gamma} patch {i}: {} vs {want}", got[i]);
        }
    }
}

#[test]
fn profile_layers_are_head_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let meta = BundleMeta { image_size: 4, patch_size: 1, layers: 3, heads: 4, cls_token: false };
    let recs: Vec<AttentionRecord> = (0..12)
        .map(|k| {
            let m = common::random_attention_matrix(&mut rng, 16);
            AttentionRecord { layer: k / 4, head: k % 4, alpha: Tensor::from_rows(16, 16, m.concat().iter().map(|&v| v as f32).collect()) }
        })
        .collect();
    let stats = PatchStats::from_counts((0..16).map(|i| u32::from(i % 4 == 1)).collect());
    let bundle = AttentionBundle::new(meta, recs).unwrap();
    let p = layer_profile(&bundle, &stats, &AnalysisParams::default()).unwrap();
    for row in &p.layers {
        let heads = &p.heads[row.layer * 4..row.layer * 4 + 4];
        let kk: Vec<f64> = heads.iter().filter_map(|h| h.global.theta_kk).collect();
        let want = kk.iter().sum::<f64>() / kk.len() as f64;
        assert!((row.theta_kk.unwrap() - want).abs() < 1e-12);
        assert_eq!(row.theta_kn.unwrap(), 1.0 - row.theta_kk.unwrap());
        let fi = heads.iter().map(|h| h.focus.delta).sum::<f64>() / 4.0;
        assert!((row.focus_index - fi).abs() < 1e-12);
    }
}
