use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use nwp_harness::fieldio::{read_archive, write_archive};
use nwp_harness::grid::{Channel, GridSpec, RegionBox, Variable};
use nwp_harness::regrid::build_plan;
use nwp_harness::report::format_value;
use nwp_harness::rollout::{builtin_step, schedule_steps, BuiltinKind};
use nwp_harness::splice::{donor_weights, region_mask, splice_states, SpliceScope, SpliceSpec};
use nwp_harness::state::{Field, StateSet};
use nwp_harness::verify::{acc_weighted, lat_weights, rmse_weighted};

fn z500() -> Channel {
    Channel::upper(Variable::Z, 500).unwrap()
}

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..=12, 1usize..=24, 0.0f64..1.0, 0.0f64..360.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(
        |(nlat, nlon, lat_frac, lon_start, dlat_frac, dlon_frac)| {
            let dlat = if nlat == 1 { 1.0 } else { 0.5 + dlat_frac * (180.0 / (nlat - 1) as f64 - 0.5) };
            let span = dlat * (nlat - 1) as f64;
            let lat_start = -90.0 + span + lat_frac * (180.0 - span);
            let dlon = 0.25 + dlon_frac * (360.0 / nlon as f64 - 0.25);
            GridSpec::new(nlat, nlon, lat_start, dlat, lon_start, dlon).unwrap()
        },
    )
}

fn field_on(grid: GridSpec, seed: u64) -> Field {
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Field::from_fn(z500(), grid, |_, _| {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 40) as f32 / (1u64 << 24) as f32 - 0.5) * 200.0
    })
}

fn state_on(grid: GridSpec, label: &str, seed: u64) -> StateSet {
    let t = Utc.with_ymd_and_hms(2023, 6, 6, 0, 0, 0).unwrap();
    let mut k = 0;
    StateSet::from_channels(t, label, grid, |c| {
        k += 1;
        let f = field_on(grid, seed.wrapping_mul(100).wrapping_add(k));
        Field::new(c, grid, f.into_values()).unwrap()
    })
    .unwrap()
}

fn bitwise_eq(a: &StateSet, b: &StateSet) -> bool {
    a.fields().iter().zip(b.fields()).all(|(x, y)| {
        x.channel() == y.channel() && x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn archive_round_trip(grid in grid_strategy(), seed in any::<u64>(), label in "[a-zA-Z0-9_]{0,24}", secs in -4_000_000_000i64..4_000_000_000) {
        let state = state_on(grid, &label, seed).with_valid_time(Utc.timestamp_opt(secs, 0).unwrap());
        let mut bytes = Vec::new();
        write_archive(&state, &mut bytes).unwrap();
        let back = read_archive(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.valid_time(), state.valid_time());
        prop_assert_eq!(back.source_label(), state.source_label());
        prop_assert_eq!(back.grid(), state.grid());
        prop_assert!(bitwise_eq(&back, &state));
    }

    #[test]
    fn regrid_weights_are_convex(src in grid_strategy(), dst in grid_strategy()) {
        prop_assume!(src.nlat >= 2 && src.nlon >= 2);
        let plan = build_plan(&src, &dst).unwrap();
        for i in 0..dst.nlat {
            for j in 0..dst.nlon {
                let (idx, w) = plan.point(i, j);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!(idx.iter().all(|&k| k < src.len()));
            }
        }
        // output stays inside the hull of its four source values
        let f = field_on(src, 7);
        let out = plan.apply(&f).unwrap();
        for i in 0..dst.nlat {
            for j in 0..dst.nlon {
                let (idx, w) = plan.point(i, j);
                let used: Vec<f32> = idx.iter().zip(w).filter(|(_, w)| *w > 0.0).map(|(&k, _)| f.values()[k]).collect();
                let lo = used.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = used.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let v = out.get(i, j);
                prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4, "{} not in [{}, {}]", v, lo, hi);
            }
        }
    }

    #[test]
    fn regrid_preserves_constants(src in grid_strategy(), dst in grid_strategy(), c in -1e4f32..1e4) {
        prop_assume!(src.nlat >= 2 && src.nlon >= 2);
        let out = build_plan(&src, &dst).unwrap().apply(&Field::filled(z500(), src, c)).unwrap();
        prop_assert!(out.values().iter().all(|&v| (v - c).abs() <= c.abs() * 1e-6));
    }

    #[test]
    fn splice_locality_and_idempotence(
        lat in -80.0f64..70.0, dlat in 0.0f64..20.0, lon in 0.0f64..300.0, dlon in 0.0f64..60.0,
        blend in prop_oneof![Just(0.0f64), 0.5f64..15.0],
        all in any::<bool>(),
    ) {
        let grid = GridSpec::global(10.0).unwrap();
        let region = RegionBox::new(lat, lat + dlat, lon, lon + dlon).unwrap();
        let scope = if all { SpliceScope::AllChannels } else { SpliceScope::UpperOnly };
        let spec = SpliceSpec { region, scope, blend_width: blend, allow_time_mismatch: false };
        let (base, donor) = (state_on(grid, "a", 1), state_on(grid, "b", 2));
        let out = splice_states(&base, &donor, &spec).unwrap();
        let alpha = donor_weights(&grid, &region, blend);
        let mask = region_mask(&grid, &region);
        for ((o, b), d) in out.fields().iter().zip(base.fields()).zip(donor.fields()) {
            let in_scope = all || !o.variable().is_surface();
            for (k, &a) in alpha.iter().enumerate() {
                let (ov, bv, dv) = (o.values()[k], b.values()[k], d.values()[k]);
                if !in_scope || a == 0.0 {
                    prop_assert_eq!(ov.to_bits(), bv.to_bits());
                } else if mask.cells()[k] {
                    prop_assert_eq!(ov.to_bits(), dv.to_bits());
                } else {
                    prop_assert!(ov >= bv.min(dv) && ov <= bv.max(dv));
                }
            }
        }
        if blend == 0.0 {
            let again = splice_states(&out, &donor, &spec).unwrap();
            prop_assert!(bitwise_eq(&again, &out));
        }
    }

    #[test]
    fn rmse_is_a_metric(grid in grid_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let w = lat_weights(&region_mask(&grid, &RegionBox::globe()));
        prop_assume!(w.is_ok());
        let w = w.unwrap();
        let (a, b, c) = (field_on(grid, s1), field_on(grid, s2), field_on(grid, s3));
        let ab = rmse_weighted(&a, &b, &w).unwrap();
        let ba = rmse_weighted(&b, &a, &w).unwrap();
        let bc = rmse_weighted(&b, &c, &w).unwrap();
        let ac = rmse_weighted(&a, &c, &w).unwrap();
        prop_assert_eq!(rmse_weighted(&a, &a, &w).unwrap(), 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn acc_is_bounded_and_symmetric(grid in grid_strategy(), s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        prop_assume!(grid.len() >= 2);
        let w = lat_weights(&region_mask(&grid, &RegionBox::globe()));
        prop_assume!(w.is_ok());
        let w = w.unwrap();
        let (f, o, c) = (field_on(grid, s1), field_on(grid, s2), field_on(grid, s3));
        let acc = acc_weighted(&f, &o, &c, &w).unwrap();
        prop_assert!((-1.0..=1.0).contains(&acc));
        let sym = acc_weighted(&o, &f, &c, &w).unwrap();
        prop_assert!((acc - sym).abs() <= 1e-12);
    }

    #[test]
    fn schedules_sum_and_descend(lead in 0u32..500, mut horizons in prop::collection::vec(1u32..48, 1..5)) {
        horizons.push(1);
        let plan = schedule_steps(lead, &horizons).unwrap();
        prop_assert_eq!(plan.total(), lead);
        prop_assert!(plan.steps().windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(plan.steps().iter().all(|s| horizons.contains(s)));
    }

    #[test]
    fn advection_composes(k in -5i64..5, n in 1u32..4) {
        let grid = GridSpec::global(15.0).unwrap();
        let s = state_on(grid, "x", 3);
        let kind = BuiltinKind::Advection { cells_per_step: k, step_hours: 24 };
        let mut stepped = s.clone();
        for _ in 0..n {
            stepped = builtin_step(&stepped, kind, 24);
        }
        let once = builtin_step(&s, kind, 24 * n);
        prop_assert!(bitwise_eq(&stepped, &once));
        prop_assert_eq!(stepped.valid_time(), once.valid_time());
    }

    #[test]
    fn formatted_values_keep_nine_digits(v in prop::num::f64::NORMAL) {
        let back: f64 = format_value(v).parse().unwrap();
        prop_assert!(((back - v) / v).abs() <= 5e-9);
    }
}
