use std::collections::BTreeSet;

use camnet::eval::reid_accuracy;
use camnet::pipeline::{
    event_correlation_baseline, event_correlation_with_zones, exhaustive_baseline, infer_cam_links, infer_zone_links,
    run_test, run_training, Routing,
};
use camnet::simgen::{default_scenario, micro_scenario, simulate, ScenarioSpec};
use camnet::topology::learn_zones_from_stream;
use camnet::types::{EventStream, PipelineConfig, TopologyGraph, TopologyLevel};

fn micro() -> (EventStream, camnet::simgen::GroundTruth) {
    simulate(&micro_scenario()).unwrap()
}

#[test]
fn pure_distractors_give_no_links() {
    let spec = ScenarioSpec {
        identities: 60,
        distractor_fraction: 1.0,
        ..micro_scenario()
    };
    let (stream, gt) = simulate(&spec).unwrap();
    assert!(gt.correspondences.is_empty());
    let cfg = PipelineConfig::default();
    let cams = infer_cam_links(&stream, &cfg).unwrap();
    assert_eq!(cams.graph.valid_edges().count(), 0);
    let run = run_training(&stream, &cfg, None).unwrap();
    assert_eq!(run.state.topology.valid_edges().count(), 0);
    assert!(run.result.correspondences.is_empty());
}

#[test]
fn noise_free_camera_links_match_ground_truth() {
    let spec = ScenarioSpec {
        noise: 0.0,
        ..default_scenario()
    };
    let (stream, gt) = simulate(&spec).unwrap();
    let cams = infer_cam_links(&stream, &PipelineConfig::default()).unwrap();
    let found: BTreeSet<_> = cams.graph.valid_edges().map(|e| (e.source.camera(), e.dest.camera())).collect();
    let truth: BTreeSet<_> = gt.camera_links().into_iter().collect();
    assert_eq!(found, truth);
}

#[test]
fn zone_search_is_gated_by_camera_links() {
    let (stream, _) = micro();
    let cfg = PipelineConfig::default();
    let cams = infer_cam_links(&stream, &cfg).unwrap();
    let zones = learn_zones_from_stream(&stream, cfg.k_max, cfg.seed).unwrap();
    let out = infer_zone_links(&stream, &cams.graph, &zones, &cfg).unwrap();
    for e in &out.graph.edges {
        assert!(cams.graph.is_valid_link(
            camnet::types::NodeId::Camera { camera: e.source.camera() },
            camnet::types::NodeId::Camera { camera: e.dest.camera() },
        ));
        assert_ne!(e.source.camera(), e.dest.camera());
        assert!(matches!(e.source, camnet::types::NodeId::Zone { kind: camnet::types::ZoneKind::Exit, .. }));
        assert!(matches!(e.dest, camnet::types::NodeId::Zone { kind: camnet::types::ZoneKind::Entry, .. }));
    }
    let mut blank = cams.graph.clone();
    blank.edges.iter_mut().for_each(|e| e.valid = false);
    assert!(infer_zone_links(&stream, &blank, &zones, &cfg).unwrap().graph.edges.is_empty());
}

#[test]
fn correspondences_stay_inside_their_windows() {
    let (stream, gt) = micro();
    let run = run_training(&stream, &PipelineConfig::default(), Some(&gt)).unwrap();
    let routing = Routing::new(&stream, &run.state.topology.zones);
    assert!(!run.result.correspondences.is_empty());
    for c in &run.result.correspondences {
        let (a, b) = (stream.index_of(c.exit_track).unwrap(), stream.index_of(c.matched_track).unwrap());
        let edge = run
            .state
            .topology
            .edge(routing.exit_node(a).unwrap(), routing.entry_node(b).unwrap())
            .unwrap();
        assert!(edge.valid);
        assert!(edge.window.contains(c.delta_t), "{} outside {:?}", c.delta_t, edge.window);
    }
}

#[test]
fn training_is_deterministic_and_stable_after_convergence() {
    let (stream, gt) = micro();
    let cfg = PipelineConfig::default();
    let a = run_training(&stream, &cfg, Some(&gt)).unwrap();
    let b = run_training(&stream, &cfg, Some(&gt)).unwrap();
    assert_eq!(a.state.topology, b.state.topology);
    assert_eq!(a.result.correspondences, b.result.correspondences);
    assert!(a.state.iteration < cfg.max_iterations);
    let longer = PipelineConfig {
        max_iterations: 2 * cfg.max_iterations,
        ..cfg
    };
    let c = run_training(&stream, &longer, Some(&gt)).unwrap();
    assert_eq!(a.state.topology, c.state.topology);
    assert_eq!(a.result.correspondences, c.result.correspondences);
}

#[test]
fn micro_training_beats_exhaustive_with_fewer_comparisons() {
    let (stream, gt) = micro();
    let cfg = PipelineConfig::default();
    let run = run_training(&stream, &cfg, Some(&gt)).unwrap();
    let base = exhaustive_baseline(&stream, &cfg).unwrap();
    let ours = reid_accuracy(&run.result.correspondences, &gt).unwrap();
    assert!(ours >= reid_accuracy(&base.correspondences, &gt).unwrap());
    assert!(run.state.comparisons.total() < base.comparisons);
    assert!(ours > 0.9);
}

#[test]
fn replaying_the_training_stream_is_at_least_as_accurate() {
    let spec = ScenarioSpec {
        noise: 0.0,
        ..micro_scenario()
    };
    let (stream, gt) = simulate(&spec).unwrap();
    let cfg = PipelineConfig::default();
    let run = run_training(&stream, &cfg, Some(&gt)).unwrap();
    let replay = run_test(&stream, &run.state.topology, &cfg).unwrap();
    let train_acc = reid_accuracy(&run.result.correspondences, &gt).unwrap();
    assert!(reid_accuracy(&replay.correspondences, &gt).unwrap() >= train_acc);
}

#[test]
fn empty_topology_emits_nothing() {
    let (stream, _) = micro();
    let out = run_test(&stream, &TopologyGraph::empty(TopologyLevel::Zone), &PipelineConfig::default()).unwrap();
    assert!(out.correspondences.is_empty());
    assert_eq!(out.comparisons, 0);
}

#[test]
fn event_correlation_on_empty_stream_is_empty() {
    let g = event_correlation_baseline(&EventStream::default(), &PipelineConfig::default()).unwrap();
    assert!(g.edges.is_empty());
}

#[test]
fn distractors_degrade_event_correlation_more_than_appearance() {
    let spec = ScenarioSpec {
        identities: 80,
        distractor_fraction: 0.6,
        noise: 0.05,
        ..micro_scenario()
    };
    let cfg = PipelineConfig::default();
    for seed in 0..5 {
        let (stream, _) = simulate(&ScenarioSpec { seed, ..spec.clone() }).unwrap();
        let zones = learn_zones_from_stream(&stream, cfg.k_max, cfg.seed).unwrap();
        let cams = infer_cam_links(&stream, &cfg).unwrap();
        let appearance = infer_zone_links(&stream, &cams.graph, &zones, &cfg).unwrap();
        let correlation = event_correlation_with_zones(&stream, &zones, &cfg).unwrap();
        let mut compared = 0;
        for e in appearance.graph.valid_edges() {
            let c = correlation.edge(e.source, e.dest).unwrap();
            assert!(c.dist.fit_error > e.dist.fit_error, "seed {seed} {} -> {}", e.source, e.dest);
            compared += 1;
        }
        assert!(compared > 0, "seed {seed}");
    }
}
