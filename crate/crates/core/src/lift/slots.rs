use std::collections::BTreeSet;

use crate::flow::FlowKey;

#[derive(Debug, Clone, Default)]
struct Slot {
    bound: Option<FlowKey>,
    next_generation: u32,
    last_ts: u64,
}

/// Result of binding a flow key to a slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub slot: u32,
    pub generation: u32,
    /// Key whose slot was taken because every slot was occupied.
    pub evicted: Option<FlowKey>,
}

/// Bounded active-flow vocabulary. Free slots are handed out lowest-index first; on
/// exhaustion the least recently active slot (lowest index on ties) is evicted. Every
/// binding bumps the slot's generation.
#[derive(Debug, Clone)]
pub struct SlotAllocator {
    slots: Vec<Slot>,
    free: BTreeSet<u32>,
    lru: BTreeSet<(u64, u32)>,
}

impl SlotAllocator {
    pub fn new(capacity: u32) -> Self {
        Self {
            slots: vec![Slot::default(); capacity as usize],
            free: (0..capacity).collect(),
            lru: BTreeSet::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.slots.len() as u32
    }

    pub fn occupied(&self) -> usize {
        self.lru.len()
    }

    pub fn key_of(&self, slot: u32) -> Option<&FlowKey> {
        self.slots[slot as usize].bound.as_ref()
    }

    pub fn bind(&mut self, key: FlowKey, ts_us: u64) -> Binding {
        let (slot, evicted) = match self.free.pop_first() {
            Some(s) => (s, None),
            None => {
                let (_, s) = self
                    .lru
                    .pop_first()
                    .expect("allocator has at least one slot");
                (s, self.slots[s as usize].bound.take())
            }
        };
        let st = &mut self.slots[slot as usize];
        let generation = st.next_generation;
        st.next_generation += 1;
        st.bound = Some(key);
        st.last_ts = ts_us;
        self.lru.insert((ts_us, slot));
        Binding {
            slot,
            generation,
            evicted,
        }
    }

    pub fn touch(&mut self, slot: u32, ts_us: u64) {
        let st = &mut self.slots[slot as usize];
        self.lru.remove(&(st.last_ts, slot));
        st.last_ts = ts_us;
        self.lru.insert((ts_us, slot));
    }

    pub fn release(&mut self, slot: u32) {
        let st = &mut self.slots[slot as usize];
        if st.bound.take().is_some() {
            self.lru.remove(&(st.last_ts, slot));
            self.free.insert(slot);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::net::IpAddr;

    use super::*;
    use crate::flow::Endpoint;
    use crate::packet::Proto;

    fn key(i: u8) -> FlowKey {
        let ip: IpAddr = format!("10.0.0.{i}").parse().unwrap();
        FlowKey {
            proto: Proto::Udp,
            lo: Endpoint { ip, port: 1 },
            hi: Endpoint { ip, port: 2 },
            icmp_class: None,
        }
    }

    #[test]
    fn lowest_free_first_and_generation_bumps() {
        let mut a = SlotAllocator::new(2);
        let b0 = a.bind(key(1), 0);
        let b1 = a.bind(key(2), 1);
        assert_eq!((b0.slot, b0.generation), (0, 0));
        assert_eq!((b1.slot, b1.generation), (1, 0));
        a.release(0);
        let b2 = a.bind(key(3), 2);
        assert_eq!((b2.slot, b2.generation), (0, 1));
    }

    #[test]
    fn exhaustion_evicts_least_recent() {
        let mut a = SlotAllocator::new(2);
        a.bind(key(1), 0);
        a.bind(key(2), 1);
        a.touch(0, 5);
        let b = a.bind(key(3), 6);
        assert_eq!(b.slot, 1);
        assert_eq!(b.generation, 1);
        assert_eq!(b.evicted, Some(key(2)));
        assert_eq!(a.occupied(), 2);
    }
}
