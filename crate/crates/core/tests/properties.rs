use approx::assert_relative_eq;
use nsd_core::io::parse_config;
use nsd_core::mesh::{build_two_domain_mesh, EdgeTag, Geometry, Rect};
use nsd_core::mms::fit_rate;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn meshes_tile_both_subdomains(w in 0.5f64..2.0, hf in 0.5f64..1.5, hp in 0.5f64..1.5, n in 3u32..12) {
        let g = Geometry::new(Rect::new(0.0, w, hp, hp + hf), Rect::new(0.0, w, 0.0, hp)).unwrap();
        let mesh = build_two_domain_mesh(&g, w / n as f64).unwrap();
        let area: f64 = (0..mesh.num_triangles()).map(|t| mesh.signed_area(t)).sum();
        prop_assert!((0..mesh.num_triangles()).all(|t| mesh.signed_area(t) > 0.0));
        assert_relative_eq!(area, g.total_area(), max_relative = 1e-12);
        let interface: f64 = mesh.tagged_edges(EdgeTag::Interface).iter().map(|e| e.length).sum();
        assert_relative_eq!(interface, g.interface_length(), max_relative = 1e-12);
    }

    #[test]
    fn fitted_rate_recovers_power_laws(rate in 0.5f64..3.5, c in 1e-4f64..1e2) {
        let x: Vec<f64> = (0..5).map(|i| 0.1 / 2f64.powi(i)).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(rate)).collect();
        assert_relative_eq!(fit_rate(&x, &y), rate, max_relative = 1e-10);
    }

    #[test]
    fn bad_numbers_are_rejected(dt in -10.0f64..0.0) {
        let e = parse_config(&format!("experiment=custom\ndt={dt}\n")).unwrap_err();
        prop_assert!(e.to_string().contains("dt"));
    }
}
