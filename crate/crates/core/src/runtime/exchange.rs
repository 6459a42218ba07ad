//! Buffered all-to-all exchange between in-process ranks.
//!
//! Each sender keeps one buffer per destination. A buffer is flushed as a
//! [`Batch`] when it reaches `buffer_capacity_kvs` entries and once more,
//! partially filled, when the sender finishes. After every rank has finished
//! sending, all ranks pass a barrier and then drain their inboxes.
//!
//! Received batches are ordered by `(sender rank, flush sequence)` before
//! being concatenated, so a rank's inbox is independent of thread scheduling:
//! it reads like an MPI all-to-all receive buffer laid out by source rank.

use std::sync::Barrier;

use crossbeam::channel::{self, Receiver, Sender};

use super::partition::partition;
use super::{KeyValue, PipelineConfig};
use crate::error::{Error, Result};

/// One buffer's worth of KVs travelling from `from` to a destination rank.
#[derive(Debug, Clone)]
pub struct Batch {
    pub from: usize,
    pub seq: u64,
    pub kvs: Vec<KeyValue>,
}

/// Moves batches between ranks. The in-process implementation uses channels;
/// a socket transport would implement the same three calls.
pub trait Transport: Sync {
    fn num_ranks(&self) -> usize;
    fn send(&self, to: usize, batch: Batch) -> Result<()>;
    /// Blocks until every rank has called `barrier`.
    fn barrier(&self);
    /// Takes every batch delivered to `rank` so far.
    fn drain(&self, rank: usize) -> Vec<Batch>;
}

pub struct InProcessTransport {
    senders: Vec<Sender<Batch>>,
    receivers: Vec<Receiver<Batch>>,
    barrier: Barrier,
}

impl InProcessTransport {
    pub fn new(num_ranks: usize) -> Self {
        let (senders, receivers) = (0..num_ranks).map(|_| channel::unbounded()).unzip();
        InProcessTransport {
            senders,
            receivers,
            barrier: Barrier::new(num_ranks),
        }
    }
}

impl Transport for InProcessTransport {
    fn num_ranks(&self) -> usize {
        self.senders.len()
    }

    fn send(&self, to: usize, batch: Batch) -> Result<()> {
        self.senders
            .get(to)
            .ok_or_else(|| Error::Invariant(format!("send to nonexistent rank {to}")))?
            .send(batch)
            .map_err(|_| Error::Invariant(format!("inbox of rank {to} is closed")))
    }

    fn barrier(&self) {
        self.barrier.wait();
    }

    fn drain(&self, rank: usize) -> Vec<Batch> {
        self.receivers[rank].try_iter().collect()
    }
}

/// Flush accounting for one sender, or summed over all senders.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlushStats {
    pub flush_count: u64,
    pub kv_count: u64,
    pub bytes: u64,
    /// Sum over flushes of `kvs_in_flush / capacity`.
    pub fill_sum: f64,
}

impl FlushStats {
    pub fn avg_fill_ratio(&self) -> f64 {
        if self.flush_count == 0 {
            0.0
        } else {
            self.fill_sum / self.flush_count as f64
        }
    }

    pub fn merge(&mut self, other: &FlushStats) {
        self.flush_count += other.flush_count;
        self.kv_count += other.kv_count;
        self.bytes += other.bytes;
        self.fill_sum += other.fill_sum;
    }
}

/// Wire size accounted per KV: key bytes plus an 8-byte count.
pub fn kv_wire_bytes(kv: &KeyValue) -> u64 {
    kv.key.len() as u64 + 8
}

/// Sending half of one rank's participation in an exchange.
pub struct ShuffleSender<'t, T: Transport + ?Sized> {
    rank: usize,
    capacity: usize,
    transport: &'t T,
    buffers: Vec<Vec<KeyValue>>,
    next_seq: Vec<u64>,
    stats: FlushStats,
}

impl<'t, T: Transport + ?Sized> ShuffleSender<'t, T> {
    pub fn new(rank: usize, capacity: usize, transport: &'t T) -> Self {
        let ranks = transport.num_ranks();
        ShuffleSender {
            rank,
            capacity,
            transport,
            buffers: (0..ranks)
                .map(|_| Vec::with_capacity(capacity.min(1 << 16)))
                .collect(),
            next_seq: vec![0; ranks],
            stats: FlushStats::default(),
        }
    }

    /// Routes `kv` to its partition.
    pub fn push(&mut self, kv: KeyValue) -> Result<()> {
        let dest = partition(&kv.key, self.buffers.len());
        self.push_to(dest, kv)
    }

    /// Appends `kv` to the buffer for `dest` without rerouting it.
    pub fn push_to(&mut self, dest: usize, kv: KeyValue) -> Result<()> {
        let buffer = self
            .buffers
            .get_mut(dest)
            .ok_or_else(|| Error::Invariant(format!("destination rank {dest} out of range")))?;
        buffer.push(kv);
        if buffer.len() >= self.capacity {
            self.flush(dest)?;
        }
        Ok(())
    }

    fn flush(&mut self, dest: usize) -> Result<()> {
        let kvs = std::mem::take(&mut self.buffers[dest]);
        if kvs.is_empty() {
            return Ok(());
        }
        self.stats.flush_count += 1;
        self.stats.kv_count += kvs.len() as u64;
        self.stats.bytes += kvs.iter().map(kv_wire_bytes).sum::<u64>();
        self.stats.fill_sum += kvs.len() as f64 / self.capacity as f64;
        let seq = self.next_seq[dest];
        self.next_seq[dest] += 1;
        self.transport.send(
            dest,
            Batch {
                from: self.rank,
                seq,
                kvs,
            },
        )
    }

    /// Flushes every partially filled buffer and returns this sender's statistics.
    pub fn finish(mut self) -> Result<FlushStats> {
        for dest in 0..self.buffers.len() {
            self.flush(dest)?;
        }
        Ok(self.stats)
    }
}

/// Collects `rank`'s inbox after the barrier, in `(sender, seq)` order, and
/// checks every KV was routed to the right rank.
pub fn receive<T: Transport + ?Sized>(transport: &T, rank: usize) -> Result<Vec<KeyValue>> {
    let ranks = transport.num_ranks();
    let mut batches = transport.drain(rank);
    batches.sort_by_key(|b| (b.from, b.seq));
    let total = batches.iter().map(|b| b.kvs.len()).sum();
    let mut received = Vec::with_capacity(total);
    for batch in batches {
        for kv in &batch.kvs {
            let owner = partition(&kv.key, ranks);
            if owner != rank {
                return Err(Error::Invariant(format!(
                    "KV {:?} from rank {} delivered to rank {rank}, but partitions to {owner}",
                    String::from_utf8_lossy(&kv.key),
                    batch.from
                )));
            }
        }
        received.extend(batch.kvs);
    }
    Ok(received)
}

/// Result of a standalone [`exchange`].
#[derive(Debug, Clone)]
pub struct ExchangeOutput {
    /// Received KVs, indexed by rank.
    pub received: Vec<Vec<KeyValue>>,
    /// Totals over all senders.
    pub stats: FlushStats,
    /// Flush statistics per sender rank.
    pub per_sender: Vec<FlushStats>,
}

/// All-to-all exchange of pre-routed queues: `outboxes[sender][dest]`.
///
/// Every sender runs on its own thread (inline when there is one rank).
/// A KV queued for a destination other than its partition is reported as an
/// invariant violation.
pub fn exchange(outboxes: Vec<Vec<Vec<KeyValue>>>, cfg: &PipelineConfig) -> Result<ExchangeOutput> {
    cfg.validate()?;
    let ranks = cfg.num_ranks;
    if outboxes.len() != ranks || outboxes.iter().any(|o| o.len() != ranks) {
        return Err(Error::Usage(format!(
            "outboxes must be {ranks} x {ranks} queues"
        )));
    }
    let transport = InProcessTransport::new(ranks);
    let results = run_ranks(outboxes, |rank, queues| {
        let mut sender = ShuffleSender::new(rank, cfg.buffer_capacity_kvs, &transport);
        let sent = queues
            .into_iter()
            .enumerate()
            .try_for_each(|(dest, queue)| {
                queue
                    .into_iter()
                    .try_for_each(|kv| sender.push_to(dest, kv))
            });
        let stats = sent.and_then(|_| sender.finish());
        transport.barrier();
        let received = receive(&transport, rank);
        Ok((stats?, received?))
    })?;

    let mut stats = FlushStats::default();
    let mut per_sender = Vec::with_capacity(ranks);
    let mut received = Vec::with_capacity(ranks);
    for (s, r) in results {
        stats.merge(&s);
        per_sender.push(s);
        received.push(r);
    }
    Ok(ExchangeOutput {
        received,
        stats,
        per_sender,
    })
}

/// Runs `work(rank, input)` for every rank concurrently and returns the
/// results in rank order. The first error (by rank) wins.
pub(crate) fn run_ranks<I, O, F>(inputs: Vec<I>, work: F) -> Result<Vec<O>>
where
    I: Send,
    O: Send,
    F: Fn(usize, I) -> Result<O> + Sync,
{
    if inputs.len() == 1 {
        let input = inputs.into_iter().next().expect("one input");
        return Ok(vec![work(0, input)?]);
    }
    let work = &work;
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .into_iter()
            .enumerate()
            .map(|(rank, input)| scope.spawn(move || work(rank, input)))
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(result) => result,
                Err(panic) => std::panic::resume_unwind(panic),
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Key;

    fn kv(key: &str, value: u64) -> KeyValue {
        KeyValue::new(key.as_bytes(), value)
    }

    fn cfg(ranks: usize, capacity: usize) -> PipelineConfig {
        PipelineConfig {
            num_ranks: ranks,
            buffer_capacity_kvs: capacity,
            combiner_enabled: false,
            run_reduce: true,
        }
    }

    /// First key of the form "k<n>" that partitions to `dest`.
    fn key_for(dest: usize, ranks: usize, skip: usize) -> String {
        (0..)
            .map(|n| format!("k{n}"))
            .filter(|k| partition(k.as_bytes(), ranks) == dest)
            .nth(skip)
            .unwrap()
    }

    #[test]
    fn single_rank_is_identity() {
        let queue: Vec<_> = (0..7).map(|i| kv(&format!("w{i}"), i)).collect();
        let out = exchange(vec![vec![queue.clone()]], &cfg(1, 100)).unwrap();
        assert_eq!(out.received, vec![queue]);
        assert_eq!(out.stats.flush_count, 1);

        let out = exchange(vec![vec![vec![]]], &cfg(1, 100)).unwrap();
        assert_eq!(out.stats.flush_count, 0);
        assert_eq!(out.stats.avg_fill_ratio(), 0.0);
    }

    #[test]
    fn two_ranks_swap() {
        let to1 = kv(&key_for(1, 2, 0), 1);
        let to0 = kv(&key_for(0, 2, 0), 1);
        let outboxes = vec![
            vec![vec![], vec![to1.clone()]],
            vec![vec![to0.clone()], vec![]],
        ];
        let out = exchange(outboxes, &cfg(2, 4)).unwrap();
        assert_eq!(out.received, vec![vec![to0], vec![to1]]);
        assert_eq!(out.stats.kv_count, 2);
    }

    #[test]
    fn flush_arithmetic() {
        let ranks = 2;
        let queue: Vec<_> = (0..25).map(|i| kv(&key_for(1, ranks, i), 1)).collect();
        let outboxes = vec![vec![vec![], queue.clone()], vec![vec![], vec![]]];
        let out = exchange(outboxes, &cfg(ranks, 10)).unwrap();
        assert_eq!(out.stats.flush_count, 3);
        assert_eq!(out.per_sender[0].flush_count, 3);
        assert!((out.stats.avg_fill_ratio() - 25.0 / 30.0).abs() < 1e-15);
        // FIFO within the (sender, destination) pair.
        assert_eq!(out.received[1], queue);
        assert_eq!(
            out.stats.bytes,
            queue.iter().map(kv_wire_bytes).sum::<u64>()
        );
    }

    #[test]
    fn misrouted_kv_is_rejected() {
        let wrong = kv(&key_for(0, 2, 0), 1);
        let outboxes = vec![vec![vec![], vec![wrong]], vec![vec![], vec![]]];
        assert!(matches!(
            exchange(outboxes, &cfg(2, 4)),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        assert!(matches!(
            exchange(vec![vec![vec![]]], &cfg(2, 4)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn receive_order_is_sender_major() {
        let ranks = 4;
        let capacity = 3;
        let mut outboxes: Vec<Vec<Vec<KeyValue>>> = vec![vec![vec![]; ranks]; ranks];
        for (sender, outbox) in outboxes.iter_mut().enumerate() {
            for i in 0..8 {
                outbox[2].push(KeyValue {
                    key: Key::from_slice(key_for(2, ranks, i).as_bytes()),
                    value: (sender * 100 + i) as u64,
                });
            }
        }
        for _ in 0..5 {
            let out = exchange(outboxes.clone(), &cfg(ranks, capacity)).unwrap();
            let values: Vec<u64> = out.received[2].iter().map(|kv| kv.value).collect();
            let expect: Vec<u64> = (0..4)
                .flat_map(|s| (0..8).map(move |i| s * 100 + i))
                .collect();
            assert_eq!(values, expect);
            assert_eq!(out.stats.flush_count, 4 * 3);
        }
    }
}
