use std::io::Cursor;

use proptest::prelude::*;

use qngpair::criteria::{
    depth_curve, pair_depth, pair_threshold, sps_depth, Depth, PairClickStats, PhotonNumberStats,
};
use qngpair::photon_number::{
    detected_click_probabilities, multimode_distribution, required_n_max, DetectionChainParams,
    PhotonPairDistribution, TAIL_TOLERANCE,
};
use qngpair::polarization::{
    tomography_reconstruct, TomoProjector, TomographyCounts, TomographyRecord,
};
use qngpair::simulator::attenuate_stream;
use qngpair::timetag::{
    correlation_histogram, Role, StreamHeader, StreamReader, StreamWriter, TimeTag, TimeTagStream,
};

fn tags_from(deltas: &[(u8, u16)]) -> Vec<TimeTag> {
    let mut t = 1_000u64;
    deltas
        .iter()
        .map(|&(ch, dt)| {
            t += dt as u64;
            TimeTag::new(ch % 5, t)
        })
        .collect()
}

fn gaussian_source() -> impl Strategy<Value = (f64, f64)> {
    (
        1e-3f64..1.5,
        prop_oneof![Just(1.0), Just(2.0), Just(10.0), Just(1e6)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn multimode_law_is_normalized((mu, modes) in gaussian_source()) {
        let n_max = required_n_max(mu, modes, TAIL_TOLERANCE).unwrap();
        let dist = multimode_distribution(mu, modes, n_max).unwrap();
        prop_assert!((dist.total() + dist.tail_mass() - 1.0).abs() < 1e-12);
        prop_assert!(dist.tail_mass() <= TAIL_TOLERANCE);
        let mean: f64 = dist.signal_marginal().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        prop_assert!((mean - mu).abs() < 1e-6 * mu.max(1.0));
    }

    #[test]
    fn cascade_law_is_normalized(q in 0.0f64..=1.0, ex in 0.0f64..0.2, exx in 0.0f64..0.2) {
        let dist = PhotonPairDistribution::cascade(q, ex, exx).unwrap();
        prop_assert!((dist.total() - 1.0).abs() < 1e-12);
        prop_assert!(dist.signal_marginal().iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn clicks_never_grow_with_loss(
        (mu, modes) in gaussian_source(),
        eta in 0.01f64..=1.0,
        t in 0.05f64..1.0,
        dark in 0.0f64..1e-3,
    ) {
        let n_max = required_n_max(mu, modes, TAIL_TOLERANCE).unwrap();
        let dist = multimode_distribution(mu, modes, n_max).unwrap();
        let hi = detected_click_probabilities(&dist, &DetectionChainParams::balanced(eta, dark)).unwrap();
        let lo = detected_click_probabilities(&dist, &DetectionChainParams::balanced(eta * t, dark)).unwrap();
        prop_assert!(lo.x1 <= hi.x1 + 1e-15);
        prop_assert!(lo.x_double <= hi.x_double + 1e-15);
        prop_assert!(lo.success() <= hi.success() + 1e-15);
        prop_assert!(lo.any_x_any_xx <= hi.any_x_any_xx + 1e-15);
    }

    #[test]
    fn attenuation_composes(p1 in 0.05f64..0.9, frac in 1e-6f64..0.05, a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
        let stats = PhotonNumberStats::exact(p1, p1 * frac).unwrap();
        let twice = stats.attenuated(a).unwrap().attenuated(b).unwrap();
        let once = stats.attenuated(a * b).unwrap();
        prop_assert!((twice.p1 - once.p1).abs() < 1e-15);
        prop_assert!((twice.p2plus - once.p2plus).abs() < 1e-15);

        let pair = PairClickStats::analytic(p1 * 0.01, p1 * 0.01 * frac);
        let twice = pair.attenuated(a).unwrap().attenuated(b).unwrap();
        let once = pair.attenuated(a * b).unwrap();
        prop_assert!((twice.ps - once.ps).abs() < 1e-15);
        prop_assert!((twice.pe - once.pe).abs() < 1e-15);
    }

    #[test]
    fn sps_depth_shifts_by_transmissivity(p1 in 0.05f64..0.9, frac in 1e-6f64..0.05, t in 0.05f64..1.0) {
        let stats = PhotonNumberStats::exact(p1, p1 * frac).unwrap();
        let before = sps_depth(&stats).unwrap().depth.db().unwrap();
        let after = sps_depth(&stats.attenuated(t).unwrap()).unwrap().depth.db().unwrap();
        prop_assert!((after - before - 10.0 * t.log10()).abs() < 1e-9);
    }

    #[test]
    fn exact_pair_depth_never_exceeds_approximation(ps in 1e-4f64..0.1, ratio in 1e-6f64..1e-2) {
        let pe = (ps * ps * ratio).min(1e-6);
        let stats = PairClickStats::analytic(ps, pe);
        if let Ok(d) = pair_depth(&stats) {
            match (d.exact, d.approx) {
                (Depth::Finite(exact), Depth::Finite(approx)) => prop_assert!(exact <= approx + 1e-9),
                (Depth::Unbounded, _) => prop_assert!(pe == 0.0),
                _ => {}
            }
        }
    }

    #[test]
    fn approximate_pair_depth_shifts_by_transmissivity(ps in 1e-3f64..0.1, ratio in 1e-6f64..1e-2, t in 0.1f64..1.0) {
        let stats = PairClickStats::analytic(ps, ps * ps * ratio);
        let (Ok(before), Ok(after)) = (pair_depth(&stats), pair_depth(&stats.attenuated(t).unwrap())) else {
            return Ok(());
        };
        let shift = after.approx.db().unwrap() - before.approx.db().unwrap();
        prop_assert!((shift - 10.0 * t.log10()).abs() < 1e-9);
    }

    #[test]
    fn threshold_is_increasing_and_led_by_square_root(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(pair_threshold(lo).unwrap() <= pair_threshold(hi).unwrap());
        let thr = pair_threshold(hi).unwrap();
        let lead = 0.5 * hi.sqrt();
        prop_assert!(lead >= thr - lead);
    }

    #[test]
    fn depth_curve_keeps_error_to_success_ratio(ps in 1e-3f64..0.1, ratio in 1e-6f64..1e-2) {
        let stats = PairClickStats::analytic(ps, ps * ps * ratio);
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let curve = depth_curve(&stats, &grid).unwrap();
        prop_assert_eq!(curve.points.len(), grid.len());
        for p in &curve.points {
            prop_assert!((p.pe * stats.ps - p.ps * stats.pe).abs() <= 1e-15 * stats.ps);
            prop_assert!((p.ps - stats.ps * p.transmissivity.powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn stream_round_trips(deltas in prop::collection::vec((0u8..5, 0u16..5000), 0..400)) {
        let header = StreamHeader::new(80e6).unwrap();
        let tags = tags_from(&deltas);
        let mut writer = StreamWriter::new(Cursor::new(Vec::new()), &header).unwrap();
        for tag in &tags {
            writer.push(*tag).unwrap();
        }
        let (_, cursor) = writer.finish().unwrap();
        let bytes = cursor.into_inner();
        let reader = StreamReader::new(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(reader.header().tag_count, tags.len() as u64);
        let back: Vec<TimeTag> = reader.map(|t| t.unwrap()).collect();
        prop_assert_eq!(&back, &tags);
    }

    #[test]
    fn swapping_channels_mirrors_histogram(deltas in prop::collection::vec((0u8..5, 0u16..3000), 1..300)) {
        let tags = tags_from(&deltas);
        let ab = correlation_histogram(tags.iter().copied().map(Ok), &[1, 2], &[3], 16, 4000).unwrap();
        let ba = correlation_histogram(tags.iter().copied().map(Ok), &[3], &[1, 2], 16, 4000).unwrap();
        let mut mirrored = ba.counts.clone();
        mirrored.reverse();
        prop_assert_eq!(ab.counts, mirrored);
    }

    #[test]
    fn self_histogram_is_symmetric(deltas in prop::collection::vec((0u8..5, 0u16..3000), 1..300)) {
        let tags = tags_from(&deltas);
        let h = correlation_histogram(tags.iter().copied().map(Ok), &[1, 2], &[1, 2], 16, 4000).unwrap();
        let mut mirrored = h.counts.clone();
        mirrored.reverse();
        prop_assert_eq!(h.counts, mirrored);
    }

    #[test]
    fn attenuation_endpoints(deltas in prop::collection::vec((0u8..5, 0u16..3000), 1..300), seed in any::<u64>()) {
        let mut header = StreamHeader::new(80e6).unwrap();
        header.pulse_count = 0;
        let stream = TimeTagStream::new(header, tags_from(&deltas)).unwrap();
        let photons = [1, 2, 3, 4];
        let kept = attenuate_stream(&stream, 1.0, &photons, seed).unwrap();
        prop_assert_eq!(&kept.tags, &stream.tags);
        let none = attenuate_stream(&stream, 0.0, &photons, seed).unwrap();
        let sync = stream.header.channel_of(Role::Sync).unwrap();
        prop_assert!(none.tags.iter().all(|t| t.channel == sync));
        prop_assert_eq!(none.tags.len(), stream.count_channel(sync));
        let half = attenuate_stream(&stream, 0.5, &photons, seed).unwrap();
        prop_assert!(half.tags.iter().all(|t| stream.tags.contains(t)));
    }

    #[test]
    fn tomography_estimate_is_physical(counts in prop::collection::vec(0u32..10_000, 16), zeros in prop::collection::vec(any::<bool>(), 16)) {
        let labels = TomoProjector::ALL
            .iter()
            .flat_map(|x| TomoProjector::ALL.iter().map(move |xx| (*x, *xx)));
        let records: Vec<_> = labels
            .zip(counts.iter().zip(&zeros))
            .map(|((x, xx), (c, z))| TomographyRecord {
                x,
                xx,
                count: if *z { 0.0 } else { *c as f64 },
                weight: 1.0,
            })
            .collect();
        let input = TomographyCounts { records };
        prop_assume!(input.records.iter().any(|r| r.count > 0.0));
        let r = tomography_reconstruct(&input).unwrap();
        let m = r.rho.matrix();
        prop_assert!((m - m.adjoint()).norm() < 1e-10);
        prop_assert!((m.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(r.rho.eigenvalues().iter().all(|e| *e >= -1e-12), "{:?}", r.rho.eigenvalues());
        prop_assert!(r.log_likelihood + 1e-9 >= r.linear_log_likelihood);
    }
}
