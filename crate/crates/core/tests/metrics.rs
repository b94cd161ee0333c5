mod common;

use std::collections::BTreeMap;

use common::micro::{self, event_micro_traces, Tcp, ACK, FIN, PSH, RST};
use common::*;
use pktact::lift::{classify_tcp_ctrl, TcpCtrl};
use pktact::metrics::*;
use pktact::CanonicalPacket;

fn reasons(pkts: &[CanonicalPacket]) -> Vec<CloseReason> {
    sessionize(pkts)
        .sessions
        .iter()
        .map(|s| s.close_reason)
        .collect()
}

fn diag(pkts: &[CanonicalPacket]) -> TcpEventCounts {
    tcp_diagnostics(pkts, &sessionize(pkts))
}

#[test]
fn fin_close_keeps_trailing_ack() {
    let mut t = Tcp::new();
    t.handshake().data(1001, 50).close(1051);
    let sz = sessionize(&t.pkts);
    assert_eq!(sz.sessions.len(), 1);
    assert_eq!(sz.sessions[0].packets, t.pkts.len() as u64);
    assert_eq!(sz.sessions[0].close_reason, CloseReason::Fin);
}

#[test]
fn data_after_both_fins_opens_new_session() {
    let mut t = Tcp::new();
    t.handshake();
    t.a(1001, 5001, FIN | ACK, 0).b(5001, 1002, FIN | ACK, 0);
    t.a(1002, 5002, ACK | PSH, 10);
    assert_eq!(reasons(&t.pkts), [CloseReason::Fin, CloseReason::TraceEnd]);
}

#[test]
fn rst_close_from_either_side() {
    for from_a in [true, false] {
        let mut t = Tcp::new();
        t.handshake()
            .send(from_a, if from_a { 1001 } else { 5001 }, 0, RST, 0, 0);
        t.ack_from_b(1001);
        assert_eq!(reasons(&t.pkts), [CloseReason::Rst, CloseReason::TraceEnd]);
    }
}

#[test]
fn idle_boundary_is_strictly_above_sixty_seconds() {
    let at = |gap| vec![micro::udp(0, true, 1), micro::udp(gap, false, 1)];
    assert_eq!(sessionize(&at(60_000_000)).sessions.len(), 1);
    assert_eq!(sessionize(&at(60_000_001)).sessions.len(), 2);
    assert_eq!(
        reasons(&at(61_000_000)),
        [CloseReason::Idle, CloseReason::TraceEnd]
    );

    let mut t = Tcp::new();
    t.handshake().wait(61_000_000).data(1001, 10);
    assert_eq!(reasons(&t.pkts), [CloseReason::Idle, CloseReason::TraceEnd]);
}

#[test]
fn back_to_back_sessions_on_one_tuple() {
    let mut t = Tcp::new();
    t.handshake().close(1001);
    t.handshake().data(1001, 10).close(1011);
    t.handshake();
    let sz = sessionize(&t.pkts);
    assert_eq!(sz.sessions.len(), 3);
    assert_eq!(
        reasons(&t.pkts),
        [CloseReason::Fin, CloseReason::Fin, CloseReason::TraceEnd]
    );
    assert_eq!(
        sz.sessions.iter().map(|s| s.packets).collect::<Vec<_>>(),
        [6, 7, 3]
    );
}

#[test]
fn icmp_echo_pairs_and_other_types_split() {
    let pkts = vec![
        micro::icmp(0, true, 8),
        micro::icmp(10, false, 0),
        micro::icmp(20, false, 3),
        micro::icmp(30, false, 11),
        micro::icmp(40, true, 8),
    ];
    let sz = sessionize(&pkts);
    assert_eq!(sz.sessions.len(), 3);
    assert_eq!(sz.labels, [0, 0, 1, 2, 0]);
    assert_eq!(sz.from_initiator, [true, false, true, true, true]);
}

#[test]
fn sessionization_is_independent_of_other_flows() {
    let mut t1 = Tcp::between("10.0.0.1", "10.0.0.2", 40000);
    t1.handshake().data(1001, 10).close(1011);
    let mut t2 = Tcp::between("10.0.0.3", "10.0.0.4", 40001);
    t2.ts = 1_000_500;
    t2.handshake().data(1001, 10);
    let mut merged: Vec<_> = t1.pkts.iter().chain(&t2.pkts).cloned().collect();
    merged.sort_by_key(|p| p.ts_us);
    let alone: Vec<_> = [&t1.pkts, &t2.pkts]
        .iter()
        .flat_map(|p| sessionize(p).sessions)
        .map(|s| (s.key, s.packets, s.close_reason))
        .collect();
    let mut together: Vec<_> = sessionize(&merged)
        .sessions
        .into_iter()
        .map(|s| (s.key, s.packets, s.close_reason))
        .collect();
    together.sort_by_key(|s| s.0);
    let mut alone = alone;
    alone.sort_by_key(|s| s.0);
    assert_eq!(alone, together);
}

#[test]
fn in_order_lossless_flow_has_no_events() {
    let mut t = Tcp::new();
    t.handshake();
    for i in 0..10 {
        t.data(1001 + i * 100, 100).ack_from_b(1101 + i * 100);
    }
    t.close(2001);
    assert_eq!(
        diag(&t.pkts),
        TcpEventCounts {
            n_tcp: t.pkts.len() as u64,
            ..Default::default()
        }
    );
}

#[test]
fn back_to_back_copy_is_one_retransmission() {
    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .data(1001, 100)
        .ack_from_b(1101);
    assert_eq!(t.pkts.len(), 6);
    let c = diag(&t.pkts);
    assert_eq!(c.retransmission, 1);
    assert_eq!(
        c[TcpEvent::SpuriousRetransmission] + c.fast_retransmission + c.out_of_order,
        0
    );
}

#[test]
fn gap_then_fill_is_lost_plus_out_of_order() {
    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 1460)
        .data(3921, 1460)
        .data(2461, 1460);
    let c = diag(&t.pkts);
    assert_eq!(
        (c.lost_segment, c.out_of_order, c.retransmission),
        (1, 1, 0)
    );
}

#[test]
fn late_fill_is_a_retransmission() {
    let mut t = Tcp::new();
    t.handshake().data(1001, 100).data(1201, 100);
    for _ in 0..REORDER_WINDOW {
        t.ack_from_b(1101);
    }
    t.data(1101, 100);
    let c = diag(&t.pkts);
    assert_eq!(
        (c.lost_segment, c.out_of_order, c.retransmission),
        (1, 0, 1)
    );
}

#[test]
fn duplicate_ack_needs_same_window() {
    let mut t = Tcp::new();
    t.handshake().data(1001, 100).ack_from_b(1101);
    t.send(false, 5001, 1101, ACK, 0, 2000);
    t.send(false, 5001, 1101, ACK, 0, 2000);
    assert_eq!(diag(&t.pkts).duplicate_ack, 1);
}

#[test]
fn zero_window_ignores_syn_and_rst() {
    let mut t = Tcp::new();
    t.send(true, 1000, 0, micro::SYN, 0, 0);
    t.send(false, 5000, 1001, micro::SYN | ACK, 0, 0);
    t.send(true, 1001, 5001, RST, 0, 0);
    assert_eq!(diag(&t.pkts).zero_window, 0);
}

#[test]
fn each_micro_trace_fires_its_event() {
    for (event, pkts) in event_micro_traces() {
        assert!(diag(&pkts)[event] > 0, "{}", event.name());
    }
}

#[test]
fn micro_trace_cross_talk_is_limited_to_definitional_overlap() {
    // Fast retransmission presupposes duplicate ACKs, and a filled gap presupposes a lost
    // segment; nothing else may fire off-diagonal.
    for (event, pkts) in event_micro_traces() {
        let c = diag(&pkts);
        for other in TcpEvent::ALL {
            if other == event {
                continue;
            }
            let allowed = matches!(
                (event, other),
                (TcpEvent::FastRetransmission, TcpEvent::DuplicateAck)
                    | (TcpEvent::OutOfOrder, TcpEvent::LostSegment)
            );
            if !allowed {
                assert_eq!(c[other], 0, "{} trace fired {}", event.name(), other.name());
            }
        }
    }
}

#[test]
fn appending_acked_in_order_segment_never_increases_counts() {
    let mut t = Tcp::new();
    t.handshake()
        .data(1001, 100)
        .ack_from_b(1101)
        .data(1001, 100);
    let before = diag(&t.pkts);
    t.data(1101, 100).ack_from_b(1201);
    let after = diag(&t.pkts);
    for e in TcpEvent::ALL {
        assert!(after[e] <= before[e], "{}", e.name());
    }
}

#[test]
fn event_distance_formula() {
    let mut r = TcpEventCounts {
        n_tcp: 200,
        ..Default::default()
    };
    r.retransmission = 4;
    let mut d = TcpEventCounts {
        n_tcp: 100,
        ..Default::default()
    };
    d.retransmission = 1;
    d.zero_window = 1;
    assert!((tcp_event_distance_pp(&r, &d) - 2.0).abs() < 1e-12);
    assert_eq!(tcp_event_distance_pp(&r, &r), 0.0);
}

#[test]
fn external_event_counts_import() {
    let c = TcpEventCounts::from_json(r#"{"n_tcp": 10, "retransmission": 2, "zero_window": 1}"#)
        .unwrap();
    assert_eq!(
        (c.n_tcp, c.retransmission, c.zero_window, c.duplicate_ack),
        (10, 2, 1, 0)
    );
}

#[test]
fn transition_distance_against_hand_enumeration() {
    let mut x = Tcp::new();
    x.handshake().data(1001, 10);
    let mut y = Tcp::new();
    y.a(1000, 0, micro::SYN, 0)
        .b(5000, 1001, micro::SYN | ACK, 0)
        .data(1001, 10)
        .a(1011, 5001, ACK, 0);
    let m = |p: &[CanonicalPacket]| TransitionMatrix::from_trace(p, &sessionize(p));
    let (mx, my) = (m(&x.pkts), m(&y.pkts));
    assert_eq!(
        classify_tcp_ctrl(x.pkts[3].tcp().unwrap().flags, 10),
        TcpCtrl::Data
    );

    // x: syn->synack, synack->ack, ack->data. y: syn->synack, synack->data, data->ack.
    // Rows of x: syn (w 1/3) identical; synack (w 1/3) ack vs data, TV 1; ack (w 1/3) absent in y, TV 1.
    assert!((transition_distance(&mx, &my) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(transition_distance(&mx, &mx), 0.0);
    assert_eq!(
        transition_distance(&TransitionMatrix::default(), &TransitionMatrix::default()),
        0.0
    );
}

#[test]
fn interleaving_examples() {
    let s = Interleaving::from_labels(&[0, 0, 1, 0], 2).stats();
    assert_eq!((s.switch_rate, s.run_mean), (2.0 / 3.0, 4.0 / 3.0));
    assert_eq!((s.run_p90, s.run_p99), (2, 2));
    let one = Interleaving::from_labels(&[3; 7], 1).stats();
    assert_eq!((one.switch_rate, one.run_mean, one.run_p99), (0.0, 7.0, 7));
    assert_eq!(nearest_rank(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 90.0), 9);
}

#[test]
fn compare_pairs_by_id_and_reports_missing() {
    let (_, _, reference) = reference(&desk_config());
    let s = TraceSummary::from_packets(&reference, 0);
    let both = BTreeMap::from([("a".to_string(), s.clone()), ("b".to_string(), s.clone())]);
    let rep = compare(&both, &both).unwrap();
    assert_eq!(rep.per_shard.len(), 2);
    let m = &rep.aggregate.metrics;
    assert_eq!(
        (m.count_err, m.iat_tv, m.transition_distance, m.coverage),
        (0.0, 0.0, 0.0, 1.0)
    );

    let one = BTreeMap::from([("a".to_string(), s)]);
    assert_eq!(
        compare(&both, &one).unwrap_err(),
        PairingError::MissingDecoded("b".into())
    );
    assert_eq!(
        compare(&one, &both).unwrap_err(),
        PairingError::MissingReference("b".into())
    );
}

#[test]
fn coverage_charges_undecodable_records() {
    let (_, _, reference) = reference(&desk_config());
    let r = TraceSummary::from_packets(&reference, 0);
    let keep = reference.len() * 9 / 10;
    let d = TraceSummary::from_packets(&reference[..keep], (reference.len() - keep) as u64);
    let m = scalar_metrics(&r, &d);
    assert_eq!(m.count_err, 0.0);
    assert!((m.coverage - keep as f64 / reference.len() as f64).abs() < 1e-12);
    assert!(m.ca_pkt_size_tv >= (1.0 - m.coverage) / 2.0);
    assert!(m.proto_tv > 0.0);
}

#[test]
fn tv_symmetry_and_schedule_mismatch() {
    let mut a = Histogram::new(Schedule::PktSize);
    let mut b = Histogram::new(Schedule::PktSize);
    a.record(60);
    a.record(1500);
    b.record(60);
    assert_eq!(tv_distance(&a, &b).unwrap(), tv_distance(&b, &a).unwrap());
    assert_eq!(tv_distance(&a, &b).unwrap(), 0.5);
    assert!(tv_distance(&a, &Histogram::new(Schedule::IatMs)).is_err());
    assert_eq!(
        tv_distance(&a, &Histogram::new(Schedule::PktSize)).unwrap(),
        1.0
    );
}
