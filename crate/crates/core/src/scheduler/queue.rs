use std::collections::BTreeSet;

/// Position of a task in arrival order. Smaller sequence numbers are closer to the head.
pub type Seq = u64;

/// FIFO wait queue that also supports removal from the middle and rank queries.
///
/// Ordered iteration comes from a `BTreeSet`; a Fenwick tree over sequence numbers
/// answers "which task sits at position k" in O(log n), which bounds the scheduling
/// window without walking it.
#[derive(Clone, Debug, Default)]
pub struct WaitQueue {
    members: BTreeSet<Seq>,
    fenwick: Vec<u32>,
    next_seq: Seq,
}

impl WaitQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn head(&self) -> Option<Seq> {
        self.members.first().copied()
    }

    pub fn contains(&self, seq: Seq) -> bool {
        self.members.contains(&seq)
    }

    /// Appends at the tail and returns the new sequence number.
    pub fn push_back(&mut self) -> Seq {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.grow_to(seq as usize + 1);
        self.add(seq, 1);
        self.members.insert(seq);
        seq
    }

    pub fn remove(&mut self, seq: Seq) -> bool {
        if self.members.remove(&seq) {
            self.add(seq, -1);
            true
        } else {
            false
        }
    }

    /// Members in queue order, head first.
    pub fn iter(&self) -> impl Iterator<Item = Seq> + '_ {
        self.members.iter().copied()
    }

    /// Sequence number at zero-based position `k`.
    pub fn nth(&self, k: usize) -> Option<Seq> {
        if k >= self.members.len() {
            return None;
        }
        // Fenwick descent for the smallest index whose prefix count exceeds k.
        let n = self.fenwick.len() - 1;
        let mut pos = 0usize;
        let mut remaining = k as u32 + 1;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.fenwick[next] < remaining {
                pos = next;
                remaining -= self.fenwick[next];
            }
            step >>= 1;
        }
        Some(pos as Seq)
    }

    /// Zero-based position of a queued member.
    pub fn position(&self, seq: Seq) -> Option<usize> {
        if !self.contains(seq) {
            return None;
        }
        Some(self.prefix(seq as usize + 1) as usize - 1)
    }

    fn prefix(&self, mut i: usize) -> u32 {
        let mut sum = 0;
        while i > 0 {
            sum += self.fenwick[i];
            i &= i - 1;
        }
        sum
    }

    fn add(&mut self, seq: Seq, delta: i32) {
        let mut i = seq as usize + 1;
        while i < self.fenwick.len() {
            self.fenwick[i] = self.fenwick[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    fn grow_to(&mut self, needed: usize) {
        if self.fenwick.len() > needed {
            return;
        }
        let size = (needed + 1).next_power_of_two().max(64);
        let mut tree = vec![0u32; size + 1];
        for &seq in &self.members {
            tree[seq as usize + 1] += 1;
        }
        for i in 1..=size {
            let parent = i + (i & i.wrapping_neg());
            if parent <= size {
                tree[parent] += tree[i];
            }
        }
        self.fenwick = tree;
    }
}
