//! Deterministic lowering of action sequences to packets under explicit per-flow TCP state.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::CloseTracker;
use crate::flowtable::{
    coord_word, fold_words, resolve_template, FieldTag, FlowTemplate, SplitMix64,
};
use crate::lift::{ttl_from_residual, ActionRecord, Dir, TcpCtrl};
use crate::packet::{
    CanonicalPacket, IcmpFields, IpFamily, Proto, TcpFields, TcpFlags, Transport, UdpFields,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    #[default]
    Synthetic,
    Zero,
    /// Payload bytes omitted; packets keep their declared length (header-only capture).
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileConfig {
    pub salt: u64,
    /// Timestamp of the first packet. Defaults to the action header's epoch.
    pub epoch_us: u64,
    pub payload: PayloadMode,
    /// Abort on the first coercion instead of repairing it.
    pub strict: bool,
}

/// Named repairs applied in permissive mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coercion {
    /// Payload digits on a syn, synack or rst action zeroed.
    ControlPayloadZeroed,
    /// An ack action carrying payload emitted as data.
    AckWithPayload,
    /// A data action with zero payload emitted as a pure ack.
    EmptyData,
    /// Nonzero sequence delta on a syn or synack ignored.
    HandshakeSeqForced,
    /// A syn after its direction already sent data or FIN.
    LateSynDropped,
    /// Action for an episode that already emitted RST.
    PostRstDropped,
    /// Negative delta reaching below the direction's ISN.
    SeqClamped,
    /// Acknowledgement beyond the peer's emitted bytes without the unseen flag.
    AckClamped,
    /// Protocol or address family changed inside an episode.
    EpisodeMismatchDropped,
    /// Action for an older generation than the slot's current episode.
    StaleGenerationDropped,
    /// Anything but a pure ACK after both FINs, or anything after the closing ACK.
    PostCloseDropped,
    /// Digit or bucket field out of range.
    FieldRange,
}

impl Coercion {
    pub fn name(self) -> &'static str {
        match self {
            Coercion::ControlPayloadZeroed => "control_payload_zeroed",
            Coercion::AckWithPayload => "ack_with_payload",
            Coercion::EmptyData => "empty_data",
            Coercion::HandshakeSeqForced => "handshake_seq_forced",
            Coercion::LateSynDropped => "late_syn_dropped",
            Coercion::PostRstDropped => "post_rst_dropped",
            Coercion::SeqClamped => "seq_clamped",
            Coercion::AckClamped => "ack_clamped",
            Coercion::EpisodeMismatchDropped => "episode_mismatch_dropped",
            Coercion::StaleGenerationDropped => "stale_generation_dropped",
            Coercion::PostCloseDropped => "post_close_dropped",
            Coercion::FieldRange => "field_range",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("action {index}: {} (strict mode)", .coercion.name())]
    Strict { index: usize, coercion: Coercion },
    #[error("action {index}: field `{field}` out of range")]
    Range { index: usize, field: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub packets: u64,
    pub actions: u64,
    pub coercions: BTreeMap<String, u64>,
    pub flows_instantiated: u64,
    pub mid_capture_instantiations: u64,
}

impl CompileReport {
    pub fn total_coercions(&self) -> u64 {
        self.coercions.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct CompileOutput {
    pub packets: Vec<CanonicalPacket>,
    /// Index of the source action for each emitted packet.
    pub source: Vec<usize>,
    pub report: CompileReport,
}

/// Per-direction TCP state. Positions are relative to the direction's ISN, modulo 2^32.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DirState {
    pub next_seq: u32,
    /// Last acknowledgement this direction sent, relative to the peer's ISN.
    pub ack_rel: u32,
    pub sent_any: bool,
    pub sent_syn: bool,
    pub sent_data_or_fin: bool,
    pub fin_sent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompilerFlowState {
    pub template: FlowTemplate,
    pub generation: u32,
    pub proto: Proto,
    pub family: IpFamily,
    pub dirs: [DirState; 2],
    pub established: bool,
    pub rst: bool,
    /// Direction of the first TCP packet emitted in the episode.
    pub initiator: Option<Dir>,
    pub close: CloseTracker,
    pub pkt_index: u64,
}

impl CompilerFlowState {
    pub fn new(template: FlowTemplate, generation: u32, proto: Proto, family: IpFamily) -> Self {
        Self {
            template,
            generation,
            proto,
            family,
            dirs: [DirState::default(); 2],
            established: false,
            rst: false,
            initiator: None,
            close: CloseTracker::new(),
            pkt_index: 0,
        }
    }

    fn isn(&self, dir: Dir) -> u32 {
        match dir {
            Dir::AToB => self.template.isn_a,
            Dir::BToA => self.template.isn_b,
        }
    }
}

fn serial_gt(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

/// TCP header values for one packet, before endpoints are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpStep {
    pub seq: u32,
    pub ack: u32,
    pub flags: TcpFlags,
    pub window: u16,
    pub payload_len: u16,
}

/// Advances TCP state by one action. `Err` carries the coercion that dropped the action;
/// repairs that still emit a packet are appended to `coercions`.
pub fn step_tcp(
    state: &mut CompilerFlowState,
    action: &ActionRecord,
    coercions: &mut Vec<Coercion>,
) -> Result<TcpStep, Coercion> {
    if state.rst {
        return Err(Coercion::PostRstDropped);
    }
    let dir = action.dir;
    let (d, p) = (dir.index(), dir.peer().index());
    let mut ctrl = action.tcp_ctrl;
    let mut payload_len = action.payload_len();

    match ctrl {
        TcpCtrl::Syn | TcpCtrl::Synack | TcpCtrl::Rst if payload_len > 0 => {
            payload_len = 0;
            coercions.push(Coercion::ControlPayloadZeroed);
        }
        TcpCtrl::Ack if payload_len > 0 => {
            ctrl = TcpCtrl::Data;
            coercions.push(Coercion::AckWithPayload);
        }
        TcpCtrl::Data if payload_len == 0 => {
            ctrl = TcpCtrl::Ack;
            coercions.push(Coercion::EmptyData);
        }
        _ => {}
    }
    let is_syn = matches!(ctrl, TcpCtrl::Syn | TcpCtrl::Synack);
    if is_syn && state.dirs[d].sent_data_or_fin {
        return Err(Coercion::LateSynDropped);
    }

    let me = state.dirs[d];
    let mut rel = if is_syn {
        if action.seq_delta() != 0 && !(me.sent_syn && action.seq_delta() == -1) {
            coercions.push(Coercion::HandshakeSeqForced);
        }
        0
    } else {
        me.next_seq.wrapping_add(action.seq_delta() as i32 as u32)
    };
    // Directions that opened with SYN never go below their ISN.
    if me.sent_syn && !is_syn && (rel as i32) < 0 {
        rel = 0;
        coercions.push(Coercion::SeqClamped);
    }
    let fin = ctrl == TcpCtrl::Fin;
    let advance = u32::from(payload_len) + u32::from(is_syn) + u32::from(fin);
    let end = rel.wrapping_add(advance);

    let flags = match ctrl {
        TcpCtrl::Syn => TcpFlags::SYN,
        TcpCtrl::Synack => TcpFlags::SYN | TcpFlags::ACK,
        TcpCtrl::Fin if payload_len > 0 => TcpFlags::FIN | TcpFlags::ACK | TcpFlags::PSH,
        TcpCtrl::Fin => TcpFlags::FIN | TcpFlags::ACK,
        TcpCtrl::Rst if state.established || state.dirs[p].sent_any => {
            TcpFlags::RST | TcpFlags::ACK
        }
        TcpCtrl::Rst => TcpFlags::RST,
        TcpCtrl::Data => TcpFlags::ACK | TcpFlags::PSH,
        TcpCtrl::Ack | TcpCtrl::None => TcpFlags::ACK,
    };
    if !state.close.admits(flags, payload_len) {
        return Err(Coercion::PostCloseDropped);
    }

    let mut ack = 0;
    if flags.ack() {
        let mut ack_rel = me.ack_rel.wrapping_add(action.ack_advance());
        let peer = state.dirs[p];
        if !action.tcp_ack_unseen && peer.sent_any && serial_gt(ack_rel, peer.next_seq) {
            ack_rel = peer.next_seq;
            coercions.push(Coercion::AckClamped);
        }
        state.dirs[d].ack_rel = ack_rel;
        ack = state.isn(dir.peer()).wrapping_add(ack_rel);
    }

    let st = &mut state.dirs[d];
    if !st.sent_any || serial_gt(end, st.next_seq) {
        st.next_seq = end;
    }
    st.sent_any = true;
    st.sent_syn |= is_syn;
    st.sent_data_or_fin |= payload_len > 0 || fin;
    st.fin_sent |= fin;
    if ctrl == TcpCtrl::Synack {
        state.established = true;
    }
    if ctrl == TcpCtrl::Rst {
        state.rst = true;
    }
    let initiator = *state.initiator.get_or_insert(dir);
    state.close.observe(dir == initiator, flags, payload_len);

    Ok(TcpStep {
        seq: state.isn(dir).wrapping_add(rel),
        ack,
        flags,
        window: action.window(),
        payload_len,
    })
}

/// Deterministic payload bytes for one packet of a flow slot.
pub fn render_payload(
    token: u16,
    generation: u32,
    proto: Proto,
    family: IpFamily,
    pkt_index: u64,
    length: u16,
    config: &CompileConfig,
) -> Vec<u8> {
    match config.payload {
        PayloadMode::None => Vec::new(),
        PayloadMode::Zero => vec![0; usize::from(length)],
        PayloadMode::Synthetic => {
            let seed = fold_words(&[
                config.salt,
                coord_word(token, generation, proto, family, FieldTag::Payload),
                pkt_index,
            ]);
            let mut out = vec![0; usize::from(length)];
            SplitMix64::new(seed).fill_bytes(&mut out);
            out
        }
    }
}

fn check_or_count(
    strict: bool,
    index: usize,
    coercions: &[Coercion],
    report: &mut CompileReport,
) -> Result<(), CompileError> {
    if strict {
        if let Some(&c) = coercions.first() {
            return Err(CompileError::Strict { index, coercion: c });
        }
    }
    for c in coercions {
        *report.coercions.entry(c.name().to_string()).or_default() += 1;
    }
    Ok(())
}

/// Compiles actions into packets, one per action unless a permissive-mode repair drops it.
pub fn compile(
    actions: &[ActionRecord],
    config: &CompileConfig,
) -> Result<CompileOutput, CompileError> {
    let mut flows: HashMap<u32, CompilerFlowState> = HashMap::new();
    let mut report = CompileReport::default();
    let mut packets = Vec::with_capacity(actions.len());
    let mut source = Vec::with_capacity(actions.len());
    let mut ts = config.epoch_us;
    let mut coercions = Vec::new();

    for (index, a) in actions.iter().enumerate() {
        report.actions += 1;
        coercions.clear();
        if index > 0 {
            ts += a.delta_t_us;
        }
        if let Err(field) = a.check_ranges(None) {
            if config.strict {
                return Err(CompileError::Range { index, field });
            }
            check_or_count(false, index, &[Coercion::FieldRange], &mut report)?;
            continue;
        }
        let token = a.flow_token as u16;

        if flows
            .get(&a.flow_token)
            .is_some_and(|s| a.generation < s.generation)
        {
            check_or_count(
                config.strict,
                index,
                &[Coercion::StaleGenerationDropped],
                &mut report,
            )?;
            continue;
        }
        let fresh = flows
            .get(&a.flow_token)
            .is_none_or(|s| s.generation != a.generation);
        if fresh {
            let template = resolve_template(token, a.proto, a.ip_family, a.generation, config.salt);
            let mut st = CompilerFlowState::new(template, a.generation, a.proto, a.ip_family);
            if a.proto == Proto::Tcp && !matches!(a.tcp_ctrl, TcpCtrl::Syn | TcpCtrl::Synack) {
                st.established = true;
                report.mid_capture_instantiations += 1;
            }
            report.flows_instantiated += 1;
            flows.insert(a.flow_token, st);
        }
        let state = flows.get_mut(&a.flow_token).expect("flow state present");
        if state.proto != a.proto || state.family != a.ip_family {
            check_or_count(
                config.strict,
                index,
                &[Coercion::EpisodeMismatchDropped],
                &mut report,
            )?;
            continue;
        }

        let (transport, payload_len) = match a.proto {
            Proto::Tcp => match step_tcp(state, a, &mut coercions) {
                Ok(step) => {
                    let (src_port, dst_port) =
                        oriented(&state.template, a.dir, |t| (t.a_port, t.b_port));
                    (
                        Transport::Tcp(TcpFields {
                            src_port,
                            dst_port,
                            seq: step.seq,
                            ack: step.ack,
                            flags: step.flags,
                            window: step.window,
                            options: a.tcp_opt_profile,
                        }),
                        step.payload_len,
                    )
                }
                Err(c) => {
                    coercions.push(c);
                    check_or_count(config.strict, index, &coercions, &mut report)?;
                    continue;
                }
            },
            Proto::Udp => {
                let (src_port, dst_port) =
                    oriented(&state.template, a.dir, |t| (t.a_port, t.b_port));
                (
                    Transport::Udp(UdpFields { src_port, dst_port }),
                    a.payload_len(),
                )
            }
            Proto::Icmp => (
                Transport::Icmp(IcmpFields {
                    icmp_type: a.icmp_type,
                    icmp_code: a.icmp_code,
                }),
                a.payload_len(),
            ),
        };
        check_or_count(config.strict, index, &coercions, &mut report)?;

        let t = &state.template;
        let (src_ip, dst_ip) = oriented(t, a.dir, |t| (t.a_ip, t.b_ip));
        let (src_mac, dst_mac) = oriented(t, a.dir, |t| (t.a_mac, t.b_mac));
        let payload = render_payload(
            token,
            a.generation,
            a.proto,
            a.ip_family,
            state.pkt_index,
            payload_len,
            config,
        );
        state.pkt_index += 1;
        packets.push(CanonicalPacket {
            ts_us: ts,
            src_mac,
            dst_mac,
            src_ip,
            dst_ip,
            ttl: ttl_from_residual(a.ttl_res),
            transport,
            payload_len,
            payload,
        });
        source.push(index);
        report.packets += 1;
    }
    Ok(CompileOutput {
        packets,
        source,
        report,
    })
}

fn oriented<T>(t: &FlowTemplate, dir: Dir, f: impl Fn(&FlowTemplate) -> (T, T)) -> (T, T) {
    let (a, b) = f(t);
    match dir {
        Dir::AToB => (a, b),
        Dir::BToA => (b, a),
    }
}
