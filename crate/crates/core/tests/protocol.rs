use std::collections::BTreeMap;

use delta_core::cloud::{build_plan, draw_samples, PastContextSummary, SamplingConfig};
use delta_core::device::UploadedWeights;
use delta_core::directory::DirectoryEntry;
use delta_core::protocol::{
    distribute_directory, run_enrichment_session, scan_for_features, CloudServer, DeviceClient, Direction,
    DirectoryDownload, EnrichmentRecord, EnrichmentResponse, ErrorMessage, Transcript, WeightUpload,
};
use delta_core::{
    build_directory, decode, encode, Dataset, FeatureVector, LabeledSample, LinearClassifier, MatchConfig, Message,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn uploaded() -> impl Strategy<Value = UploadedWeights> {
    (
        any::<u32>(),
        any::<usize>(),
        prop::collection::btree_map(any::<u32>(), finite(), 0..6),
    )
        .prop_map(|(context_id, sample_count, weights)| UploadedWeights {
            context_id,
            sample_count,
            weights,
        })
}

fn message() -> impl Strategy<Value = Message> {
    let entry = (
        any::<usize>(),
        any::<usize>(),
        prop::collection::vec(finite(), 0..4),
        finite(),
        any::<usize>(),
    )
        .prop_map(|(cluster_id, label, m, dispersion, member_count)| DirectoryEntry {
            cluster_id,
            label,
            medoid_feature: FeatureVector::new(m).unwrap(),
            dispersion,
            member_count,
        });
    let download = (
        any::<u32>(),
        any::<usize>(),
        any::<usize>(),
        prop::collection::vec(entry, 0..4),
    )
        .prop_map(|(version, feature_dim, class_count, entries)| {
            Message::DirectoryDownload(DirectoryDownload {
                version,
                feature_dim,
                class_count,
                entries,
            })
        });
    let upload = (
        ".{0,12}",
        any::<u32>(),
        uploaded(),
        prop::collection::vec(uploaded(), 0..3),
    )
        .prop_map(|(device_id, context_id, current, past)| {
            Message::WeightUpload(WeightUpload {
                device_id,
                context_id,
                current,
                past,
            })
        });
    let record = (
        any::<u32>(),
        any::<usize>(),
        any::<usize>(),
        prop::collection::vec(finite(), 0..4),
        finite(),
    )
        .prop_map(
            |(context_id, cluster_id, label, feature, importance_weight)| EnrichmentRecord {
                context_id,
                cluster_id,
                label,
                feature,
                importance_weight,
            },
        );
    let response = (any::<u32>(), prop::collection::vec(record, 0..4))
        .prop_map(|(context_id, records)| Message::EnrichmentResponse(EnrichmentResponse { context_id, records }));
    let error = (".{0,16}", "\\PC{0,40}").prop_map(|(code, detail)| Message::Error(ErrorMessage { code, detail }));
    prop_oneof![download, upload, response, error]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_message_round_trips_bit_exactly(m in message()) {
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        // canonical: re-encoding gives the same bytes
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_frames_are_rejected(m in message(), cut in 1usize..64) {
        let bytes = encode(&m);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode(&bytes[..keep]).is_err());
    }
}

struct World {
    cloud: CloudServer,
    device: DeviceClient,
    contexts: Vec<Dataset>,
}

/// `classes` labels around separated centres: 30 cloud and 5 device
/// samples per class and context.
fn world(classes: usize, clusters_per_label: usize, contexts: usize, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 6;
    let centre =
        |label: usize, t: usize| -> Vec<f64> { (0..dim).map(|k| ((label * 7 + k * 3 + t) % 11) as f64).collect() };
    let point = |label: usize, t: usize, rng: &mut ChaCha8Rng| {
        let f: Vec<f64> = centre(label, t)
            .iter()
            .map(|c| c + rng.random_range(-0.5..0.5))
            .collect();
        LabeledSample::new(FeatureVector::new(f).unwrap(), label)
    };
    let mut cloud = Vec::new();
    let mut device = Vec::new();
    for t in 0..contexts {
        let mut local = Vec::new();
        for label in 0..classes {
            for _ in 0..30 {
                cloud.push(point(label, t, &mut rng));
            }
            for _ in 0..5 {
                local.push(point(label, t, &mut rng));
            }
        }
        device.push(Dataset::new(format!("device/{t}"), local));
    }
    let cloud = Dataset::new("cloud", cloud);
    let (dir, assign) = build_directory(&cloud, clusters_per_label, seed).unwrap();
    World {
        cloud: CloudServer::new(
            cloud,
            dir,
            assign,
            SamplingConfig {
                budget_per_class: 4,
                seed,
                ..SamplingConfig::default()
            },
        ),
        device: DeviceClient::new("phone-7", MatchConfig::default()),
        contexts: device,
    }
}

#[test]
fn first_context_plan_ignores_the_past_and_second_uses_stored_weights() {
    let mut w = world(3, 4, 2, 1);
    let model = LinearClassifier::zeros(3, 6);
    let mut transcript = Transcript::default();
    distribute_directory(&mut w.device, &w.cloud, &mut transcript).unwrap();
    assert_eq!(w.device.directory(), Some(&w.cloud.directory));

    w.device.begin_context(w.contexts[0].clone());
    let b1 = run_enrichment_session(&w.device, &model, &mut w.cloud, &mut transcript).unwrap();
    let s = w.cloud.session("phone-7").unwrap();
    assert_eq!(s.weights.len(), 1);
    // independent recomputation of the context-1 draw with no past summary
    let dense = s.weights[0].dense(w.cloud.directory.len()).unwrap();
    let plan = build_plan(
        1,
        &dense,
        &w.cloud.directory,
        &w.cloud.assignment,
        &w.cloud.cloud,
        None,
        &w.cloud.sampling,
    )
    .unwrap();
    let direct = draw_samples(
        &plan,
        &w.cloud.cloud,
        w.cloud.context_seed("phone-7", 1),
        w.cloud.sampling.replacement,
    )
    .unwrap();
    assert_eq!(b1.samples, direct.samples);
    assert_eq!(b1.importance_weights, direct.importance_weights);

    w.device.begin_context(w.contexts[1].clone());
    let b2 = run_enrichment_session(&w.device, &model, &mut w.cloud, &mut transcript).unwrap();
    let s = w.cloud.session("phone-7").unwrap();
    assert_eq!(s.weights.len(), 2);
    assert_eq!(s.weights.iter().map(|u| u.context_id).collect::<Vec<_>>(), vec![1, 2]);
    // past summary equals the context-1 weighted directory mean, by hand
    let n = w.cloud.directory.len();
    let past = s.weights[0].dense(n).unwrap();
    let mut by_hand = vec![0.0; 6];
    for (e, wc) in w.cloud.directory.entries.iter().zip(&past) {
        for (a, m) in by_hand.iter_mut().zip(e.medoid_feature.as_slice()) {
            *a += wc * m;
        }
    }
    let summary = PastContextSummary::from_weight_history(std::slice::from_ref(&past), &w.cloud.directory)
        .unwrap()
        .unwrap();
    for (a, b) in summary.mean_past_feature.as_slice().iter().zip(&by_hand) {
        assert!((a - b).abs() < 1e-12);
    }
    let current = s.weights[1].dense(n).unwrap();
    let plan = build_plan(
        2,
        &current,
        &w.cloud.directory,
        &w.cloud.assignment,
        &w.cloud.cloud,
        Some(&summary),
        &w.cloud.sampling,
    )
    .unwrap();
    let direct = draw_samples(
        &plan,
        &w.cloud.cloud,
        w.cloud.context_seed("phone-7", 2),
        w.cloud.sampling.replacement,
    )
    .unwrap();
    assert_eq!(b2.samples, direct.samples);

    // 1 download, then an upload and a download per context
    let dirs: Vec<Direction> = transcript.frames.iter().map(|f| f.direction).collect();
    assert_eq!(
        dirs,
        vec![
            Direction::Download,
            Direction::Upload,
            Direction::Download,
            Direction::Upload,
            Direction::Download
        ]
    );
}

#[test]
fn replaying_an_upload_gives_the_same_response() {
    let mut w = world(2, 3, 1, 4);
    let model = LinearClassifier::random(2, 6, 0.1, 3);
    let mut t = Transcript::default();
    distribute_directory(&mut w.device, &w.cloud, &mut t).unwrap();
    w.device.begin_context(w.contexts[0].clone());
    let up = encode(&w.device.prepare_upload(&model).unwrap());
    let mut other = w.cloud.clone();
    let first = w.cloud.handle(&up);
    assert_eq!(first, w.cloud.handle(&up));
    assert_eq!(first, other.handle(&up));
    assert_eq!(w.cloud.session("phone-7").unwrap().weights.len(), 1);
}

#[test]
fn bad_uploads_become_error_messages_without_touching_state() {
    let mut w = world(2, 3, 1, 5);
    let bogus = encode(&Message::WeightUpload(WeightUpload {
        device_id: "x".into(),
        context_id: 2,
        current: UploadedWeights {
            context_id: 2,
            sample_count: 1,
            weights: BTreeMap::from([(0, 1.0)]),
        },
        past: Vec::new(),
    }));
    let reply = decode(&w.cloud.handle(&bogus)).unwrap();
    assert!(
        matches!(reply, Message::Error(ref e) if e.code == "bad_context"),
        "{reply:?}"
    );
    let garbage = w.cloud.handle(b"\x00\x00\x00\x02{\n");
    assert!(matches!(decode(&garbage).unwrap(), Message::Error(ref e) if e.code == "decode"));
    let unknown = encode(&Message::WeightUpload(WeightUpload {
        device_id: "x".into(),
        context_id: 1,
        current: UploadedWeights {
            context_id: 1,
            sample_count: 1,
            weights: BTreeMap::from([(9999, 1.0)]),
        },
        past: Vec::new(),
    }));
    assert!(matches!(decode(&w.cloud.handle(&unknown)).unwrap(), Message::Error(_)));
    assert!(w.cloud.session("x").is_none());
}

#[test]
fn transcripts_never_carry_device_features_and_uploads_stay_small() {
    // 10 labels x 20 clusters = 200 directory entries
    let mut w = world(10, 20, 5, 6);
    assert_eq!(w.cloud.directory.len(), 200);
    let model = LinearClassifier::random(10, 6, 0.2, 8);
    let mut transcript = Transcript::default();
    distribute_directory(&mut w.device, &w.cloud, &mut transcript).unwrap();
    for data in &w.contexts {
        w.device.begin_context(data.clone());
        let before = transcript.bytes_in(Direction::Upload);
        let batch = run_enrichment_session(&w.device, &model, &mut w.cloud, &mut transcript).unwrap();
        assert!(!batch.is_empty());
        let uploaded = transcript.bytes_in(Direction::Upload) - before;
        assert!(uploaded < 4096, "context upload of {uploaded} bytes");
    }
    let sets: Vec<&Dataset> = w.contexts.iter().collect();
    assert!(scan_for_features(&transcript.to_bytes(), &sets).unwrap().is_empty());
    // the scanner itself is live: the cloud's own samples are found
    let cloud_sets = [&w.cloud.cloud];
    assert!(!scan_for_features(&transcript.to_bytes(), &cloud_sets)
        .unwrap()
        .is_empty());
}

#[test]
fn documented_error_frame_is_exact() {
    let mut w = world(2, 1, 1, 2);
    let up = encode(&Message::WeightUpload(WeightUpload {
        device_id: "device-0".into(),
        context_id: 2,
        current: UploadedWeights {
            context_id: 2,
            sample_count: 4,
            weights: BTreeMap::from([(0, 0.5), (1, 0.5)]),
        },
        past: Vec::new(),
    }));
    let mut expected = vec![0, 0, 0, 0x68];
    expected.extend_from_slice(
        b"{\"type\":\"error\",\"code\":\"bad_context\",\"detail\":\"context 2 upload must carry weights for contexts 1..=2\"}\n",
    );
    assert_eq!(w.cloud.handle(&up), expected);
}
