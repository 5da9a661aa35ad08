use toolpath_rl::assets::{asset_dir, bundled, frame_lattice, triangular_grid};
use toolpath_rl::graph::CoverageMode;
use toolpath_rl::io::{parse_graph, ToolpathFile};
use toolpath_rl::planner::{plan_toolpath, plan_with_policy, replay_toolpath, PlanConfig, Policy, Widths};

fn tiny(mode: CoverageMode) -> PlanConfig {
    let mut c = PlanConfig::for_mode(mode);
    c.rings = 1;
    c.seed = 3;
    c.widths = Widths { e2e1: 2, e2e2: 2, e2n: 2, hidden: 8 };
    c
}

#[test]
fn bundled_assets_match_generators() {
    for (name, content) in bundled() {
        let on_disk = std::fs::read_to_string(asset_dir().join(name)).unwrap();
        assert!(on_disk == content, "{name} is stale; regenerate with `toolpath-rl assets`");
        parse_graph(&asset_dir().join(name)).unwrap();
    }
}

#[test]
fn toolpath_file_is_lossless() {
    let g = triangular_grid(4, 4, 7.3);
    let config = tiny(CoverageMode::Ccf);
    let r = plan_toolpath(&g, &config).unwrap();
    let file = ToolpathFile::from_result(&g, &config, &r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tp.json");
    file.save(&path).unwrap();
    let back = ToolpathFile::load(&path).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.toolpath(&g), r.toolpath);
}

#[test]
fn replay_reproduces_rewards() {
    let g = frame_lattice(2, 2, 2, 15.0);
    let config = tiny(CoverageMode::Wireframe);
    let r = plan_with_policy(&g, &config, Policy::Greedy).unwrap();
    let steps: Vec<_> = r.toolpath.steps.iter().map(|s| (s.node, s.jump)).collect();
    let again = replay_toolpath(&g, &config, &steps).unwrap();
    assert_eq!(again.toolpath, r.toolpath);
    assert_eq!(again.summary.peak_u_max, r.summary.peak_u_max);
}

#[test]
fn truncated_json_reports_position() {
    let err = ToolpathFile::from_json("{\"version\": 1, \"header\":").unwrap_err();
    assert!(err.to_string().contains("line 1"), "{err}");
}
