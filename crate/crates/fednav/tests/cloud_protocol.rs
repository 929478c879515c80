//! End-to-end tests of the TCP registry: round trips, concurrent uploads,
//! and downloads racing a fusion install.

use std::collections::HashSet;
use std::sync::Arc;
use std::thread;

use fednav::cloud::registry::nav_registry;
use fednav::cloud::{model_checksum, serve, CloudClient, FusionPolicy};
use fednav::env::{ACTION_COUNT, OBS_DIM};
use fednav::fusion::FusionConfig;
use fednav::nn::NetworkParameters;

fn tiny_fusion() -> FusionConfig {
    let mut config = FusionConfig::quick();
    config.sample_count = 500;
    config.holdout_count = 100;
    config.hidden_dims = vec![16];
    config.train.epochs = 5;
    config
}

fn start_server(policy: FusionPolicy, seed: u64) -> fednav::cloud::ServerHandle {
    let registry = nav_registry(None, seed, 5.66, tiny_fusion()).unwrap();
    serve("127.0.0.1:0", Arc::new(registry), policy).unwrap()
}

fn private_model(seed: u64) -> NetworkParameters {
    NetworkParameters::init_random(&[OBS_DIM, 16, ACTION_COUNT], seed).unwrap()
}

#[test]
fn upload_fuse_download_round_trip() {
    let server = start_server(FusionPolicy::EveryNUploads(1), 1);
    let addr = server.addr.to_string();
    let mut client = CloudClient::connect(&addr, "r1").unwrap();

    let (gen0, initial) = client.download_shared().unwrap();
    assert_eq!(gen0, 0);
    // The download must hand back exactly the registry's stored bytes.
    assert_eq!(
        model_checksum(&initial),
        model_checksum(&server.registry().current().params)
    );

    client.upload_private(&private_model(42), "env-1").unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    let fused = loop {
        let (gen, params) = client.download_shared().unwrap();
        if gen == 1 {
            break params;
        }
        assert!(std::time::Instant::now() < deadline, "fusion never landed");
        thread::sleep(std::time::Duration::from_millis(20));
    };
    assert_eq!(
        model_checksum(&fused),
        model_checksum(&server.registry().current().params)
    );
    server.shutdown();
}

#[test]
fn eight_concurrent_uploads_acked_exactly_once() {
    // Fusion stays manual so every upload remains queued and countable.
    let server = start_server(FusionPolicy::Manual, 2);
    let addr = server.addr.to_string();

    let handles: Vec<_> = (0..8)
        .map(|i| {
            let addr = addr.clone();
            thread::spawn(move || {
                let mut client =
                    CloudClient::connect(&addr, &format!("robot-{i}")).unwrap();
                client
                    .upload_private(&private_model(100 + i as u64), "env-x")
                    .unwrap()
            })
        })
        .collect();
    let ids: Vec<String> = handles.into_iter().map(|h| h.join().unwrap()).collect();

    let unique: HashSet<&String> = ids.iter().collect();
    assert_eq!(unique.len(), 8, "duplicate ACK ids: {ids:?}");
    assert_eq!(server.registry().pending_len(), 8);

    // One fusion batch consumes all eight exactly once.
    server.registry().trigger_fusion().unwrap();
    assert_eq!(server.registry().pending_len(), 0);
    assert_eq!(
        server.registry().current().report.as_ref().unwrap().n_actors,
        8
    );
    server.shutdown();
}

#[test]
fn download_racing_fusion_sees_whole_generations() {
    let server = start_server(FusionPolicy::EveryNUploads(1), 3);
    let addr = server.addr.to_string();
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));

    // Hammer downloads while generations advance underneath.
    let readers: Vec<_> = (0..4)
        .map(|i| {
            let addr = addr.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                let mut client =
                    CloudClient::connect(&addr, &format!("reader-{i}")).unwrap();
                let mut last_gen = 0;
                let mut observed = Vec::new();
                while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                    let (gen, params) = client.download_shared().unwrap();
                    assert!(gen >= last_gen, "generation went backwards");
                    last_gen = gen;
                    // A torn model would fail decoding or change dims;
                    // forward() on a valid input is the liveness check.
                    let scores = params.forward(&vec![0.5; OBS_DIM]).unwrap();
                    assert_eq!(scores.len(), ACTION_COUNT);
                    assert!(scores.iter().all(|s| s.is_finite()));
                    observed.push((gen, model_checksum(&params)));
                }
                observed
            })
        })
        .collect();

    let mut writer = CloudClient::connect(&addr, "writer").unwrap();
    for round in 0..5u64 {
        writer.upload_private(&private_model(round), "env-y").unwrap();
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
        while server.registry().generation() <= round as u32 {
            assert!(std::time::Instant::now() < deadline, "fusion stalled");
            thread::sleep(std::time::Duration::from_millis(5));
        }
    }
    stop.store(true, std::sync::atomic::Ordering::Relaxed);

    // Every observed (generation, checksum) pair matches the registry's
    // record: no reader ever saw a half-installed model.
    for reader in readers {
        for (gen, checksum) in reader.join().unwrap() {
            let record = server.registry().record(gen).unwrap();
            assert_eq!(checksum, model_checksum(&record.params), "torn read at gen {gen}");
        }
    }
    server.shutdown();
}
