//! End-to-end scenarios against an in-process daemon over real sockets.

use std::path::PathBuf;

use eacof_core::client::{Endpoint, Scope, Session};
use eacof_core::daemon::{spawn, DaemonSettings, ShutdownHandle};
use eacof_core::model::{Device, ErrorCode, Topology};
use eacof_core::providers::trace::parse_trace;
use eacof_core::providers::{run_trace_provider, ReplaySpeed};
use eacof_core::registry::Attribution;

fn topology() -> Topology {
    Topology { sockets: 1, cores_per_socket: 2, hdds: 1, gpus: 0, has_memory: true }
}

fn quiet_settings() -> DaemonSettings {
    let mut s = DaemonSettings::new(topology());
    s.quiet = true;
    s
}

struct TestDaemon {
    handle: ShutdownHandle,
    endpoint: Endpoint,
    join: Option<std::thread::JoinHandle<()>>,
    _dir: tempfile::TempDir,
}

impl TestDaemon {
    fn start(settings: DaemonSettings) -> TestDaemon {
        let dir = tempfile::tempdir().unwrap();
        let path: PathBuf = dir.path().join("ca.sock");
        let (handle, endpoint, join) = spawn(&Endpoint::Unix(path), settings).unwrap();
        TestDaemon { handle, endpoint, join: Some(join), _dir: dir }
    }

    fn connect(&self) -> Session {
        Session::connect_to(&self.endpoint).unwrap()
    }
}

impl Drop for TestDaemon {
    fn drop(&mut self) {
        self.handle.shutdown();
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

#[test]
fn probe_lifecycle_over_the_wire() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();

    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    assert!(!probe.is_active());

    // sample before activation
    assert_eq!(provider.add_sample(&probe, 1.0), Err(ErrorCode::InactiveProbe));

    provider.activate_probe(&mut probe).unwrap();
    provider.add_sample(&probe, 1.5).unwrap();
    provider.add_sample(&probe, 2.5).unwrap();

    // client-side validation short-circuits before the wire
    assert_eq!(provider.add_sample(&probe, f64::NAN), Err(ErrorCode::InvalidValue));
    assert_eq!(provider.add_sample(&probe, -1.0), Err(ErrorCode::InvalidValue));

    let snap = provider.status().unwrap();
    assert_eq!(snap.probes.len(), 1);
    assert_eq!(snap.probes[0].cumulative, 4.0);
    assert!(snap.probes[0].active);

    // stale handle after delete
    let stale = probe.clone();
    provider.delete_probe(probe).unwrap();
    assert_eq!(provider.add_sample(&stale, 0.5), Err(ErrorCode::UnknownId));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();
    let mut consumer = daemon.connect();

    assert_eq!(
        consumer.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap_err(),
        ErrorCode::Unmonitorable
    );

    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    provider.activate_probe(&mut probe).unwrap();

    let ckpt = consumer.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap();
    assert_eq!(consumer.sample_checkpoint(&ckpt).unwrap().joules, 0.0);

    provider.add_sample(&probe, 1.0).unwrap();
    provider.add_sample(&probe, 2.5).unwrap();
    provider.add_sample(&probe, 0.5).unwrap();
    let v = consumer.sample_checkpoint(&ckpt).unwrap();
    assert_eq!(v.joules, 4.0);
    assert!(v.continuous);

    let stale = ckpt.clone();
    consumer.delete_checkpoint(ckpt).unwrap();
    assert_eq!(consumer.sample_checkpoint(&stale).unwrap_err(), ErrorCode::UnknownId);
    assert_eq!(consumer.delete_checkpoint(stale).unwrap_err(), ErrorCode::UnknownId);
}

#[test]
fn empty_device_list_is_rejected_client_side() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut session = daemon.connect();
    assert_eq!(session.create_probe(&[]).unwrap_err(), ErrorCode::Protocol);
    assert_eq!(session.set_checkpoint(Scope::All, &[]).unwrap_err(), ErrorCode::Protocol);
    // the session is still healthy
    assert!(session.status().is_ok());
}

#[test]
fn consumers_have_independent_baselines() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();
    let mut consumer_a = daemon.connect();
    let mut consumer_b = daemon.connect();

    let mut probe = provider.create_probe(&[Device::hdd_unit(0)]).unwrap();
    provider.activate_probe(&mut probe).unwrap();

    let ckpt_a = consumer_a.set_checkpoint(Scope::All, &[Device::hdd_unit(0)]).unwrap();
    provider.add_sample(&probe, 2.0).unwrap();
    let ckpt_b = consumer_b.set_checkpoint(Scope::All, &[Device::hdd_unit(0)]).unwrap();
    provider.add_sample(&probe, 3.0).unwrap();

    assert_eq!(consumer_a.sample_checkpoint(&ckpt_a).unwrap().joules, 5.0);
    assert_eq!(consumer_b.sample_checkpoint(&ckpt_b).unwrap().joules, 3.0);
    // sampling A again right away does not disturb B
    assert_eq!(consumer_a.sample_checkpoint(&ckpt_a).unwrap().joules, 0.0);
}

#[test]
fn foreign_checkpoints_are_protected() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();
    let mut owner = daemon.connect();
    let mut intruder = daemon.connect();

    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    provider.activate_probe(&mut probe).unwrap();
    let ckpt = owner.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap();

    // the intruder clones the handle (same id) but does not own the record
    let stolen = ckpt.clone();
    assert_eq!(intruder.sample_checkpoint(&stolen).unwrap_err(), ErrorCode::Permission);
    assert_eq!(intruder.delete_checkpoint(stolen).unwrap_err(), ErrorCode::Permission);
}

#[test]
fn trace_provider_replays_immediately_and_cleans_up() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();
    let mut consumer = daemon.connect();

    let events = parse_trace("0 ACTIVATE\n10 SAMPLE 1.5\n20 SAMPLE 2.5\n").unwrap();

    // a checkpoint needs the probe to exist first, so pre-register one
    // long-lived probe for the consumer and replay the trace through another
    let mut anchor = provider.create_probe(&[Device::memory()]).unwrap();
    provider.activate_probe(&mut anchor).unwrap();

    let mut trace_session = daemon.connect();
    let summary =
        run_trace_provider(&mut trace_session, &events, &[Device::memory()], ReplaySpeed::Immediate)
            .unwrap();
    assert_eq!(summary.pushed_joules, 4.0);
    assert_eq!(summary.samples, 2);

    // trace probe is gone afterwards; only the anchor remains
    let snap = consumer.status().unwrap();
    assert_eq!(snap.probes.len(), 1);

    // replaying a trace whose first event is a sample aborts with the
    // daemon's inactive-probe error
    let bad = parse_trace("0 SAMPLE 1.0\n").unwrap();
    let err = run_trace_provider(&mut trace_session, &bad, &[Device::memory()], ReplaySpeed::Immediate)
        .unwrap_err();
    assert!(matches!(
        err,
        eacof_core::providers::ProviderError::Code(ErrorCode::InactiveProbe)
    ));
}

#[test]
fn deactivation_marks_discontinuity_and_deletion_loses_coverage() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut provider = daemon.connect();
    let mut consumer = daemon.connect();

    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    provider.activate_probe(&mut probe).unwrap();
    let ckpt = consumer.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap();

    provider.add_sample(&probe, 1.0).unwrap();
    provider.deactivate_probe(&mut probe).unwrap();
    provider.activate_probe(&mut probe).unwrap();
    provider.add_sample(&probe, 2.0).unwrap();

    let v = consumer.sample_checkpoint(&ckpt).unwrap();
    assert_eq!(v.joules, 3.0);
    assert!(!v.continuous);
    assert!(consumer.sample_checkpoint(&ckpt).unwrap().continuous);

    provider.delete_probe(probe).unwrap();
    assert_eq!(consumer.sample_checkpoint(&ckpt).unwrap_err(), ErrorCode::CoverageLost);
}

#[test]
fn provider_disconnect_deletes_its_probes() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut consumer = daemon.connect();

    {
        let mut provider = daemon.connect();
        let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
        provider.activate_probe(&mut probe).unwrap();
        let ckpt = consumer.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap();
        provider.add_sample(&probe, 1.0).unwrap();
        drop(provider); // connection closes, probe is cleaned up

        // wait for the daemon to notice the hangup
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
        loop {
            let snap = consumer.status().unwrap();
            if snap.probes.is_empty() {
                break;
            }
            assert!(std::time::Instant::now() < deadline, "probe cleanup never happened");
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        assert_eq!(consumer.sample_checkpoint(&ckpt).unwrap_err(), ErrorCode::CoverageLost);
    }
}

#[test]
fn daemon_restart_fails_the_session_then_unknown_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ca.sock");
    let endpoint = Endpoint::Unix(path);

    let (handle, bound, join) = spawn(&endpoint, quiet_settings()).unwrap();
    let mut provider = Session::connect_to(&bound).unwrap();
    let probe = provider.create_probe(&[Device::cpu_all()]).unwrap();

    handle.shutdown();
    join.join().unwrap();

    // the old session observes the dead connection and stays failed
    let stale = probe.clone();
    assert_eq!(provider.delete_probe(probe), Err(ErrorCode::Connection));
    assert!(provider.is_failed());
    assert_eq!(provider.status().unwrap_err(), ErrorCode::Connection);

    // a fresh daemon on the same path: stale socket file is rebound, but
    // daemon state did not survive the restart
    let (handle2, bound2, join2) = spawn(&endpoint_clone(&bound), quiet_settings()).unwrap();
    let mut reconnected = Session::connect_to(&bound2).unwrap();
    assert_eq!(reconnected.add_sample(&stale, 1.0).unwrap_err(), ErrorCode::UnknownId);
    handle2.shutdown();
    join2.join().unwrap();
}

fn endpoint_clone(e: &Endpoint) -> Endpoint {
    e.clone()
}

#[test]
fn tcp_transport_works_too() {
    let settings = quiet_settings();
    let (handle, endpoint, join) = spawn(&Endpoint::Tcp("127.0.0.1:0".into()), settings).unwrap();
    let mut provider = Session::connect_to(&endpoint).unwrap();
    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    provider.activate_probe(&mut probe).unwrap();
    provider.add_sample(&probe, 0.25).unwrap();
    let snap = provider.status().unwrap();
    assert_eq!(snap.probes[0].cumulative, 0.25);
    drop(provider);
    handle.shutdown();
    join.join().unwrap();
}

#[test]
fn self_checkpoint_under_trace_attribution() {
    use eacof_core::providers::attribution::AttributionTable;

    // pid of this very test process gets a quarter of the cpu
    let pid = std::process::id();
    let table =
        AttributionTable::parse(&format!("0 {pid} cpu 0.25\n")).unwrap();
    let resolved = table.resolve(&topology()).unwrap();
    let mut settings = quiet_settings();
    settings.attribution = Attribution::Trace(resolved);
    let daemon = TestDaemon::start(settings);

    let mut provider = daemon.connect();
    let mut consumer = daemon.connect();
    let mut probe = provider.create_probe(&[Device::cpu_all()]).unwrap();
    provider.activate_probe(&mut probe).unwrap();

    let self_ckpt = consumer.set_checkpoint(Scope::SelfProcess, &[Device::cpu_all()]).unwrap();
    let all_ckpt = consumer.set_checkpoint(Scope::All, &[Device::cpu_all()]).unwrap();
    provider.add_sample(&probe, 8.0).unwrap();

    assert_eq!(consumer.sample_checkpoint(&self_ckpt).unwrap().joules, 2.0);
    assert_eq!(consumer.sample_checkpoint(&all_ckpt).unwrap().joules, 8.0);
}

#[test]
fn empty_trace_registers_and_deletes_its_probe() {
    let daemon = TestDaemon::start(quiet_settings());
    let mut session = daemon.connect();
    let summary =
        run_trace_provider(&mut session, &[], &[Device::cpu_all()], ReplaySpeed::Immediate)
            .unwrap();
    assert_eq!(summary.pushed_joules, 0.0);
    assert_eq!(summary.samples, 0);
    assert!(session.status().unwrap().probes.is_empty());
}

#[test]
fn constant_provider_pushes_the_configured_power() {
    use eacof_core::providers::run_constant_power_provider;

    let daemon = TestDaemon::start(quiet_settings());
    let mut session = daemon.connect();
    // 10 W at 50 Hz for 2 s: exactly 100 ticks of 0.2 J
    let summary = run_constant_power_provider(
        &mut session,
        10.0,
        50.0,
        &[Device::cpu_all()],
        Some(2.0),
    )
    .unwrap();
    assert_eq!(summary.samples, 100);
    assert!((summary.pushed_joules - 20.0).abs() <= 0.2);
}

#[test]
fn unresponsive_server_times_out_with_connection_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mute.sock");
    let listener = std::os::unix::net::UnixListener::bind(&path).unwrap();
    // accept but never reply to the HELLO
    let accept = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        std::thread::sleep(std::time::Duration::from_secs(3));
        drop(stream);
    });
    let started = std::time::Instant::now();
    let err = match Session::connect_to(&Endpoint::Unix(path)) {
        Ok(_) => panic!("connect should have timed out"),
        Err(e) => e,
    };
    assert_eq!(err, ErrorCode::Connection);
    // default EACOF_TIMEOUT_MS is 1000
    assert!(started.elapsed() >= std::time::Duration::from_millis(500));
    assert!(started.elapsed() < std::time::Duration::from_secs(3));
    accept.join().unwrap();
}

#[test]
fn hello_version_mismatch_is_fatal() {
    use eacof_core::wire::{encode, FrameDecoder, WireMessage};
    use std::io::{Read, Write};

    let daemon = TestDaemon::start(quiet_settings());
    let Endpoint::Unix(path) = &daemon.endpoint else { panic!("unix expected") };
    let mut stream = std::os::unix::net::UnixStream::connect(path).unwrap();
    let hello = WireMessage::Hello { req_id: 1, proto_version: 99 };
    stream.write_all(&encode(&hello).unwrap()).unwrap();

    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 1024];
    let reply = loop {
        let n = stream.read(&mut buf).unwrap();
        assert!(n > 0, "daemon hung up without a reply");
        decoder.feed(&buf[..n]);
        if let Some(msg) = decoder.next().unwrap() {
            break msg;
        }
    };
    match reply {
        WireMessage::Reply(r) => assert_eq!(r.code, ErrorCode::Protocol),
        other => panic!("unexpected {other:?}"),
    }
    // daemon closes the connection after the version mismatch
    let n = stream.read(&mut buf).unwrap();
    assert_eq!(n, 0);
}
