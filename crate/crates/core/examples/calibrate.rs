//! Measures the desk-scale pipeline stage by stage: reference rendering,
//! keypoint density, map statistics, retrieval sanity, training speed and
//! quality, and full-image render cost. Used to pick the shipped default
//! configuration; run with `--release`.
//!
//! Usage: calibrate [iters] [batch] [width] [n_coarse] [n_fine] [cluster]

use std::time::Instant;

use patchloc::division::kmeans_poses;
use patchloc::egm::{build_map, retrieve, BuildConfig};
use patchloc::features::{DetectorConfig, GridStats, ShiTomasi};
use patchloc::ilm::{
    render_image, train, ArchConfig, EncodingConfig, ModelConfig, SamplingConfig, TrainConfig,
};
use patchloc::img::psnr;
use patchloc::synthetic::{oracle_render, Complexity, SceneBundle};

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let iters = arg(0, 300.0) as usize;
    let batch = arg(1, 512.0) as usize;
    let width = arg(2, 64.0) as usize;
    let n_coarse = arg(3, 32.0) as usize;
    let n_fine = arg(4, 32.0) as usize;
    let cluster_id = arg(5, 0.0) as u32;
    let lr = arg(6, 10.0) * 1e-4;
    let lr_decay_after = arg(7, usize::MAX as f64) as usize;
    let lr_decay_target = arg(8, 1e-8);

    let bundle = SceneBundle::generate(42, Complexity::Medium);
    let scale = bundle.scene.scene_scale;
    println!(
        "scene: scale {:.3}, {} primitives, {} references, {} queries",
        scale,
        bundle.scene.primitives.len(),
        bundle.reference_poses.len(),
        bundle.query_poses.len()
    );

    let t0 = Instant::now();
    let views: Vec<_> = bundle
        .reference_poses
        .iter()
        .map(|pose| oracle_render(&bundle.scene, pose, &bundle.intrinsics))
        .collect();
    println!(
        "rendered {} reference views in {:.2} s",
        views.len(),
        t0.elapsed().as_secs_f64()
    );
    let fg: f64 = views.iter().map(|(_, d)| d.foreground_fraction()).sum::<f64>() / 20.0;
    println!("mean foreground fraction {fg:.3}, background {:?}", bundle.scene.background);

    let detector = ShiTomasi(DetectorConfig::default());
    let mut counts: Vec<usize> = views
        .iter()
        .map(|(image, _)| {
            use patchloc::features::KeypointDetector;
            detector.detect(image).len()
        })
        .collect();
    counts.sort();
    println!(
        "keypoints per view: min {} median {} max {}",
        counts[0],
        counts[counts.len() / 2],
        counts[counts.len() - 1]
    );

    let t0 = Instant::now();
    let config = BuildConfig::for_scale(scale, 4, 42);
    let map = build_map(
        &views,
        &bundle.reference_poses,
        &bundle.intrinsics,
        &detector,
        &GridStats,
        &config,
    )
    .expect("map builds");
    println!(
        "map: {} points, {} references, built in {:.2} s",
        map.points.len(),
        map.references.len(),
        t0.elapsed().as_secs_f64()
    );
    let mut per_ref: Vec<usize> = map.references.iter().map(|r| r.keypoints.len()).collect();
    per_ref.sort();
    println!(
        "surviving keypoints per reference: min {} median {} max {}",
        per_ref[0],
        per_ref[per_ref.len() / 2],
        per_ref[per_ref.len() - 1]
    );
    let clusters = kmeans_poses(&bundle.reference_poses, 4, 42, 100).expect("kmeans");
    let mut sizes = [0usize; 4];
    for &a in &clusters.assignments {
        sizes[a] += 1;
    }
    println!("cluster sizes: {sizes:?}");

    // Retrieval sanity: each reference's own descriptor retrieves itself;
    // each query's top-1 is a reference whose camera is nearby.
    let self_hits = map
        .references
        .iter()
        .filter(|r| retrieve(&map, &r.global_descriptor, 1)[0].0 == r.id)
        .count();
    println!("retrieval self-hits: {self_hits}/{}", map.references.len());
    let mut near_hits = 0;
    for query_pose in &bundle.query_poses {
        let (query_image, _) = oracle_render(&bundle.scene, query_pose, &bundle.intrinsics);
        let descriptor = patchloc::features::global_descriptor(&query_image);
        let top = retrieve(&map, &descriptor, 3);
        let qc = query_pose.camera_center();
        // Rank references by camera distance; hit if any retrieved
        // candidate is among the 5 nearest.
        let mut by_dist: Vec<(f64, u32)> = map
            .references
            .iter()
            .map(|r| ((r.pose.camera_center() - qc).norm(), r.id))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let near: Vec<u32> = by_dist.iter().take(5).map(|&(_, id)| id).collect();
        if top.iter().any(|&(id, _)| near.contains(&id)) {
            near_hits += 1;
        }
    }
    println!("retrieval near-hits (top-3 vs 5 nearest): {near_hits}/20");

    // Training on one cluster, holding out one view for PSNR.
    let members: Vec<usize> = clusters
        .assignments
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == cluster_id as usize)
        .map(|(i, _)| i)
        .collect();
    println!("training cluster {cluster_id}: views {members:?}");
    let holdout = members[members.len() / 2];
    let train_views: Vec<usize> = members.iter().copied().filter(|&i| i != holdout).collect();
    let images: Vec<_> = train_views.iter().map(|&i| views[i].0.clone()).collect();
    let poses: Vec<_> = train_views.iter().map(|&i| bundle.reference_poses[i]).collect();

    let model_config = ModelConfig {
        encoding: EncodingConfig::default(),
        arch: ArchConfig {
            trunk_depth: 4,
            trunk_width: width as u32,
            color_hidden_width: (width / 2) as u32,
        },
        position_scale: 1.0 / scale,
    };
    let sampling = SamplingConfig {
        n_coarse,
        n_fine,
        ..SamplingConfig::for_scale(scale)
    };
    let train_config = TrainConfig {
        iterations: iters,
        batch_size: batch,
        learning_rate: lr,
        lr_decay_after,
        lr_decay_target,
        log_every: (iters / 10).max(1),
        seed: 42,
        ..TrainConfig::default()
    };
    println!(
        "config: batch {batch} width {width} samples {n_coarse}+{n_fine} lr {lr} decay after {lr_decay_after} to {lr_decay_target}"
    );
    let t0 = Instant::now();
    let (model, log) = train(
        cluster_id,
        &images,
        &poses,
        &bundle.intrinsics,
        &model_config,
        &train_config,
        &sampling,
    )
    .expect("training succeeds");
    let train_s = t0.elapsed().as_secs_f64();
    println!(
        "trained {} iters in {:.1} s ({:.1} ms/iter)",
        iters,
        train_s,
        train_s * 1e3 / iters as f64
    );
    for entry in &log {
        println!(
            "  iter {:>5}  loss {:.5}  probe psnr {:.2} dB",
            entry.iteration, entry.loss, entry.probe_psnr_db
        );
    }

    let t0 = Instant::now();
    let rendered = render_image(
        &model,
        &bundle.reference_poses[holdout],
        &bundle.intrinsics,
        &sampling,
        7,
    )
    .expect("render succeeds");
    let render_s = t0.elapsed().as_secs_f64();
    let heldout_psnr = psnr(&views[holdout].0, &rendered);
    println!(
        "held-out view {holdout}: psnr {:.2} dB (full 128x128 render took {:.2} s)",
        heldout_psnr, render_s
    );
    rendered.save_png(std::path::Path::new("/tmp/calibrate_rendered.png")).unwrap();
    views[holdout].0.save_png(std::path::Path::new("/tmp/calibrate_oracle.png")).unwrap();
    let trained_view = train_views[0];
    let re_rendered = render_image(
        &model,
        &bundle.reference_poses[trained_view],
        &bundle.intrinsics,
        &sampling,
        7,
    )
    .expect("render succeeds");
    println!(
        "training view {trained_view}: psnr {:.2} dB",
        psnr(&views[trained_view].0, &re_rendered)
    );
}
