//! Group membership, sequencing and fan-out.
//!
//! Each group sits behind its own mutex. Sequence assignment, the state
//! fold and the enqueue onto every member's outbox all happen under that
//! lock, which is what gives every member the same gap-free order.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tokio::sync::mpsc;

use crate::instrument::{self, InstrumentError, MultimeterState};
use crate::protocol::{
    Body, ErrorCode, GroupId, Member, MessageEnvelope, RosterBlock, UserId, MAX_MEMBERS,
    MAX_NAME_LEN,
};

use super::records::{LearningRecord, RecordKind, RecordLog};

/// Per-connection delivery queue; the connection's writer drains it in order.
pub type Outbox = mpsc::UnboundedSender<Arc<MessageEnvelope>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("user {0} is already connected")]
    DuplicateUser(UserId),
    #[error("name is {0} bytes, maximum is 255")]
    OversizedName(usize),
    #[error("group {0} is full")]
    GroupFull(GroupId),
    #[error("session has left its group")]
    NotJoined,
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error("{0} messages are not relayed")]
    NotRelayable(&'static str),
}

impl BrokerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            BrokerError::DuplicateUser(_) => ErrorCode::DuplicateUser,
            BrokerError::OversizedName(_) => ErrorCode::OversizedName,
            BrokerError::GroupFull(_) => ErrorCode::GroupFull,
            BrokerError::NotJoined => ErrorCode::NotJoined,
            BrokerError::Instrument(_) => ErrorCode::InvalidParameter,
            BrokerError::NotRelayable(_) => ErrorCode::UnexpectedKind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionStatus {
    Connected,
    Departed,
}

#[derive(Debug)]
pub struct MemberSession {
    pub user_id: UserId,
    pub name: String,
    pub joined_at: SystemTime,
    outbox: Outbox,
}

#[derive(Debug)]
struct Group {
    id: GroupId,
    members: BTreeMap<UserId, MemberSession>,
    next_seq: u32,
    state: MultimeterState,
    last_ts: u64,
}

impl Group {
    fn new(id: GroupId) -> Self {
        Group {
            id,
            members: BTreeMap::new(),
            next_seq: 1,
            state: MultimeterState::default(),
            last_ts: 0,
        }
    }

    fn roster(&self) -> RosterBlock {
        RosterBlock {
            members: self
                .members
                .values()
                .map(|m| Member {
                    id: m.user_id,
                    name: m.name.clone(),
                })
                .collect(),
            state: self.state,
        }
    }

    fn last_seq(&self) -> u32 {
        self.next_seq - 1
    }

    fn broadcast(&self, env: MessageEnvelope, skip: Option<UserId>) -> usize {
        let env = Arc::new(env);
        let mut delivered = 0;
        for m in self.members.values() {
            if Some(m.user_id) == skip {
                continue;
            }
            if m.outbox.send(env.clone()).is_ok() {
                delivered += 1;
            }
        }
        delivered
    }

    fn timestamp(&mut self) -> u64 {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.last_ts = self.last_ts.max(now);
        self.last_ts
    }
}

/// Snapshot of one group for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSnapshot {
    pub id: GroupId,
    pub members: Vec<Member>,
    pub next_seq: u32,
    pub state: MultimeterState,
}

/// A joined member as seen by its connection.
#[derive(Debug)]
pub struct SessionHandle {
    pub user_id: UserId,
    pub group_id: GroupId,
    group: Arc<Mutex<Group>>,
    status: ConnectionStatus,
}

impl SessionHandle {
    pub fn status(&self) -> ConnectionStatus {
        self.status
    }
}

pub struct Registry {
    users: Mutex<HashMap<UserId, GroupId>>,
    groups: Mutex<HashMap<GroupId, Arc<Mutex<Group>>>>,
    records: RecordLog,
}

impl Registry {
    pub fn new(records: RecordLog) -> Self {
        Registry {
            users: Mutex::new(HashMap::new()),
            groups: Mutex::new(HashMap::new()),
            records,
        }
    }

    pub fn records(&self) -> &RecordLog {
        &self.records
    }

    fn group(&self, id: GroupId) -> Arc<Mutex<Group>> {
        self.groups
            .lock()
            .unwrap()
            .entry(id)
            .or_insert_with(|| Arc::new(Mutex::new(Group::new(id))))
            .clone()
    }

    fn record(
        &self,
        g: &mut Group,
        user: UserId,
        kind: RecordKind,
        detail: String,
        seq: Option<u32>,
    ) {
        let ts = g.timestamp();
        self.records.append(LearningRecord {
            ts,
            group: g.id,
            user,
            kind,
            detail,
            seq,
        });
    }

    /// Add a member. The JOIN_ACK (roster plus authoritative state) is the
    /// first thing queued on its outbox; the others get a ROSTER_UPDATE.
    pub fn join(
        &self,
        user_id: UserId,
        group_id: GroupId,
        name: &str,
        outbox: Outbox,
    ) -> Result<SessionHandle, BrokerError> {
        if name.len() > MAX_NAME_LEN {
            return Err(BrokerError::OversizedName(name.len()));
        }
        let mut users = self.users.lock().unwrap();
        if users.contains_key(&user_id) {
            return Err(BrokerError::DuplicateUser(user_id));
        }
        let group = self.group(group_id);
        let mut g = group.lock().unwrap();
        if g.members.len() >= MAX_MEMBERS {
            return Err(BrokerError::GroupFull(group_id));
        }
        users.insert(user_id, group_id);
        drop(users);

        g.members.insert(
            user_id,
            MemberSession {
                user_id,
                name: name.to_string(),
                joined_at: SystemTime::now(),
                outbox: outbox.clone(),
            },
        );
        let roster = g.roster();
        let seq = g.last_seq();
        let _ = outbox.send(Arc::new(MessageEnvelope {
            origin: user_id,
            group: group_id,
            seq,
            body: Body::JoinAck(roster.clone()),
        }));
        g.broadcast(
            MessageEnvelope {
                origin: user_id,
                group: group_id,
                seq,
                body: Body::RosterUpdate(roster),
            },
            Some(user_id),
        );
        self.record(&mut g, user_id, RecordKind::Join, name.to_string(), None);
        drop(g);
        Ok(SessionHandle {
            user_id,
            group_id,
            group,
            status: ConnectionStatus::Connected,
        })
    }

    /// Sequence and fan out one CONTROL, CHAT or MEASUREMENT to every
    /// member of the sender's group, sender included. Returns the assigned
    /// seq and the number of deliveries queued. Rejected messages consume
    /// no seq.
    pub fn relay(&self, session: &SessionHandle, body: Body) -> Result<(u32, usize), BrokerError> {
        if session.status == ConnectionStatus::Departed {
            return Err(BrokerError::NotJoined);
        }
        let mut g = session.group.lock().unwrap();
        let (relay_body, next_state, kind, detail) = match body {
            Body::Control(p) => {
                let next = instrument::apply_control(&g.state, &p)?;
                (
                    Body::RelayControl(p),
                    next,
                    RecordKind::Control,
                    p.to_string(),
                )
            }
            Body::Measurement(r) => {
                let next = instrument::apply_reading(&g.state, &r)?;
                let shown = instrument::render_display(&instrument::reading_panel(&r)?);
                (
                    Body::RelayMeasurement(r),
                    next,
                    RecordKind::Measurement,
                    shown,
                )
            }
            Body::Chat { text } => {
                let state = g.state;
                (
                    Body::RelayChat { text: text.clone() },
                    state,
                    RecordKind::Chat,
                    text,
                )
            }
            other => return Err(BrokerError::NotRelayable(other.kind().name())),
        };
        let seq = g.next_seq;
        g.next_seq = g
            .next_seq
            .checked_add(1)
            .expect("group sequence space exhausted");
        g.state = next_state;
        let delivered = g.broadcast(
            MessageEnvelope {
                origin: session.user_id,
                group: session.group_id,
                seq,
                body: relay_body,
            },
            None,
        );
        self.record(&mut g, session.user_id, kind, detail, Some(seq));
        Ok((seq, delivered))
    }

    /// Remove a member and tell the rest. Idempotent.
    pub fn leave(&self, session: &mut SessionHandle) {
        if session.status == ConnectionStatus::Departed {
            return;
        }
        session.status = ConnectionStatus::Departed;
        let mut users = self.users.lock().unwrap();
        users.remove(&session.user_id);
        let mut g = session.group.lock().unwrap();
        drop(users);
        let Some(member) = g.members.remove(&session.user_id) else {
            return;
        };
        let seq = g.last_seq();
        g.broadcast(
            MessageEnvelope {
                origin: session.user_id,
                group: session.group_id,
                seq,
                body: Body::RosterUpdate(g.roster()),
            },
            None,
        );
        self.record(
            &mut g,
            session.user_id,
            RecordKind::Leave,
            member.name,
            None,
        );
    }

    pub fn snapshot(&self, group_id: GroupId) -> Option<GroupSnapshot> {
        let group = self.groups.lock().unwrap().get(&group_id)?.clone();
        let g = group.lock().unwrap();
        let roster = g.roster();
        Some(GroupSnapshot {
            id: g.id,
            members: roster.members,
            next_seq: g.next_seq,
            state: g.state,
        })
    }

    pub fn group_ids(&self) -> Vec<GroupId> {
        let mut ids: Vec<_> = self.groups.lock().unwrap().keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn connected_users(&self) -> usize {
        self.users.lock().unwrap().len()
    }
}
