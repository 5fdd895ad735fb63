use std::path::PathBuf;

use aarmr_bench::Preset;

fn canonical(p: Preset) -> Vec<usize> {
    if p.dim() == 2 {
        vec![8, 4]
    } else {
        vec![4, 2, 4]
    }
}

fn render() -> String {
    let mut out = String::new();
    for p in Preset::ALL {
        let dims = canonical(p);
        out.push_str(&format!("[{} {:?}]\n", p, dims));
        out.push_str(&p.build(&dims).unwrap().describe());
    }
    out
}

/// Set UPDATE_GOLDEN=1 to rewrite the file after a deliberate change.
#[test]
fn preset_boundary_conditions_match_golden_file() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/preset_bcs.txt");
    let got = render();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden file missing; run with UPDATE_GOLDEN=1");
    assert_eq!(got, want);
}

#[test]
fn inverter_ports_sit_on_the_symmetry_edge() {
    let setup = Preset::Inverter2d.build(&[8, 4]).unwrap();
    let springs = setup.model.dofmap().springs().to_vec();
    assert_eq!(springs, vec![(0, 1.0), (16, 0.1)]);
    // every vertical DOF on the bottom row is fixed
    for i in 0..=8 {
        assert!(setup.model.dofmap().is_fixed(2 * i + 1));
    }
}
