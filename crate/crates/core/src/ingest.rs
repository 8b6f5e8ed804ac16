//! Sample acquisition and collection: the append-only RSS log, timed replay,
//! reader adapters and epoch windowing into per-tag [`RssVector`]s.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::diversity::RssVector;
use crate::error::{Error, Result};

pub const DEFAULT_EPOCH_MS: i64 = 500;
pub const DEFAULT_REORDER_EPOCHS: i64 = 2;

/// One reading of one tag on one reader antenna. Serializes to the log/feed
/// record `{"t":..,"tag":..,"reader":..,"ant":..,"rss":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssSample {
    /// Milliseconds since the stream epoch.
    pub t: i64,
    #[serde(rename = "tag")]
    pub tag_id: String,
    #[serde(rename = "reader")]
    pub reader_id: String,
    #[serde(rename = "ant")]
    pub antenna: usize,
    /// dBm.
    pub rss: f64,
}

impl RssSample {
    pub fn new(t: i64, tag_id: impl Into<String>, reader_id: impl Into<String>, antenna: usize, rss: f64) -> Self {
        Self {
            t,
            tag_id: tag_id.into(),
            reader_id: reader_id.into(),
            antenna,
            rss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rss.is_finite() {
            return Err(Error::InsufficientData(format!("non-finite rss {}", self.rss)));
        }
        if self.tag_id.is_empty() || self.reader_id.is_empty() {
            return Err(Error::InsufficientData("empty tag or reader id".into()));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let s: RssSample = serde_json::from_str(line)?;
        s.validate()?;
        Ok(s)
    }
}

/// Append-only, line-per-record sample store.
#[derive(Debug)]
pub struct SampleLog {
    path: PathBuf,
    file: File,
    len: u64,
    count: u64,
    sync: bool,
}

impl SampleLog {
    /// Opens (creating if needed) a log for appending. A trailing record cut
    /// off mid-line by a crash is discarded so new records start cleanly.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .create(true)
            .append(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            warn!(
                path = %path.display(),
                dropped_bytes = bytes.len() - complete,
                "discarding truncated final record"
            );
            file.set_len(complete as u64)?;
        }
        let count = bytes[..complete]
            .split(|&b| b == b'\n')
            .filter(|line| {
                std::str::from_utf8(line)
                    .ok()
                    .is_some_and(|l| RssSample::from_line(l.trim()).is_ok())
            })
            .count() as u64;
        file.seek(SeekFrom::End(0))?;
        Ok(Self {
            path,
            file,
            len: complete as u64,
            count,
            sync: false,
        })
    }

    /// fsync after every append.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of valid records in the log.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Appends one record. On a failed write the file is cut back to its
    /// previous length so no partial record remains.
    pub fn append(&mut self, sample: &RssSample) -> Result<u64> {
        sample.validate()?;
        let mut line = sample.to_line();
        line.push('\n');
        let written = self.file.write_all(line.as_bytes()).and_then(|_| {
            if self.sync {
                self.file.sync_data()
            } else {
                self.file.flush()
            }
        });
        if let Err(e) = written {
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        self.count += 1;
        Ok(self.count)
    }

    pub fn scan(&self) -> Result<LogScan> {
        read_log(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LogScan {
    pub samples: Vec<RssSample>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads every valid record of a log in stored order. Malformed lines are
/// skipped with a warning and reported in [`LogScan::skipped`].
pub fn read_log(path: impl AsRef<Path>) -> Result<LogScan> {
    let file = File::open(path.as_ref())?;
    read_records(BufReader::new(file))
}

pub fn read_records<R: BufRead>(reader: R) -> Result<LogScan> {
    let mut scan = LogScan::default();
    for (idx, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let text = String::from_utf8_lossy(&line);
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        match RssSample::from_line(text) {
            Ok(s) => scan.samples.push(s),
            Err(e) => {
                warn!(line = idx + 1, error = %e, "skipping malformed sample record");
                scan.skipped.push(SkippedLine {
                    line: idx + 1,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(scan)
}

pub fn write_records<'a, W, I>(mut out: W, samples: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RssSample>,
{
    for s in samples {
        writeln!(out, "{}", s.to_line())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CompactStats {
    pub kept: usize,
    pub malformed: usize,
    pub expired: usize,
}

/// Rewrites a log in place without malformed lines and, if `keep_from` is
/// given, without records older than it. The rewrite goes through a
/// temporary file and an atomic rename.
pub fn compact(path: impl AsRef<Path>, keep_from: Option<i64>) -> Result<CompactStats> {
    let path = path.as_ref();
    let scan = read_log(path)?;
    let tmp = path.with_extension("compact.tmp");
    let mut stats = CompactStats {
        malformed: scan.skipped.len(),
        ..Default::default()
    };
    {
        let mut out = std::io::BufWriter::new(File::create(&tmp)?);
        for s in &scan.samples {
            if keep_from.is_some_and(|from| s.t < from) {
                stats.expired += 1;
                continue;
            }
            writeln!(out, "{}", s.to_line())?;
            stats.kept += 1;
        }
        out.flush()?;
        out.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    /// No pacing.
    Unlimited,
    /// Wall-clock gaps are the recorded gaps divided by this factor.
    Factor(f64),
}

impl ReplaySpeed {
    pub fn from_factor(f: f64) -> Self {
        if f.is_infinite() {
            ReplaySpeed::Unlimited
        } else {
            ReplaySpeed::Factor(f)
        }
    }
}

/// Paces an ordered sample stream against the wall clock.
pub struct Replay<I> {
    inner: I,
    speed: ReplaySpeed,
    origin: Option<(i64, Instant)>,
}

impl<I: Iterator<Item = RssSample>> Replay<I> {
    pub fn new(inner: I, speed: ReplaySpeed) -> Self {
        Self {
            inner,
            speed,
            origin: None,
        }
    }
}

impl<I: Iterator<Item = RssSample>> Iterator for Replay<I> {
    type Item = RssSample;

    fn next(&mut self) -> Option<RssSample> {
        let sample = self.inner.next()?;
        if let ReplaySpeed::Factor(factor) = self.speed {
            let (t0, start) = *self.origin.get_or_insert((sample.t, Instant::now()));
            let offset_ms = (sample.t - t0).max(0) as f64 / factor;
            let due = start + Duration::from_secs_f64(offset_ms / 1000.0);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        Some(sample)
    }
}

/// Replays a stored log. Fails up front if the log cannot be read.
pub fn replay(path: impl AsRef<Path>, speed: ReplaySpeed) -> Result<Replay<std::vec::IntoIter<RssSample>>> {
    let path = path.as_ref();
    let scan = read_log(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("cannot replay {}: {io}", path.display()),
        )),
        other => other,
    })?;
    Ok(Replay::new(scan.samples.into_iter(), speed))
}

/// A source of samples from some reader front end: the simulator, a stored
/// log or a live network feed.
pub trait SampleSource: Iterator<Item = RssSample> + Send {}

impl<T: Iterator<Item = RssSample> + Send> SampleSource for T {}

/// Line-delimited JSON sample feed over TCP, one connection per reader.
/// Records from all connections are merged into one stream.
pub struct TcpFeed {
    local_addr: SocketAddr,
    rx: mpsc::Receiver<RssSample>,
}

impl TcpFeed {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("tcp-feed-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    let Ok(conn) = conn else { continue };
                    let tx = tx.clone();
                    let peer = conn.peer_addr().ok();
                    let _ = thread::Builder::new().name("tcp-feed-conn".into()).spawn(move || {
                        for (idx, line) in BufReader::new(conn).lines().enumerate() {
                            let Ok(line) = line else { break };
                            if line.trim().is_empty() {
                                continue;
                            }
                            match RssSample::from_line(line.trim()) {
                                Ok(s) => {
                                    if tx.send(s).is_err() {
                                        return;
                                    }
                                }
                                Err(e) => warn!(?peer, line = idx + 1, error = %e, "bad feed record"),
                            }
                        }
                    });
                }
            })?;
        Ok(Self { local_addr, rx })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<RssSample> {
        self.rx.recv_timeout(timeout).ok()
    }
}

impl Iterator for TcpFeed {
    type Item = RssSample;

    fn next(&mut self) -> Option<RssSample> {
        self.rx.recv().ok()
    }
}

/// Multi-reader readings of one tag for one epoch window.
#[derive(Debug, Clone, PartialEq)]
pub struct TagWindow {
    pub tag_id: String,
    /// Window start, ms.
    pub epoch: i64,
    /// One vector per reader that heard the tag, keyed by reader id.
    pub vectors: BTreeMap<String, RssVector>,
}

type Slot = Option<(i64, f64)>;

/// Groups samples into tumbling windows `[k·epoch, (k+1)·epoch)`. Within a
/// window the latest sample per antenna wins. Windows are released once the
/// stream has moved `reorder_epochs` windows past them; samples arriving for
/// an already released window are dropped and counted.
#[derive(Debug)]
pub struct Windower {
    epoch_ms: i64,
    reorder_epochs: i64,
    antenna_counts: HashMap<String, usize>,
    open: BTreeMap<(i64, String), BTreeMap<String, Vec<Slot>>>,
    newest: Option<i64>,
    late_dropped: u64,
    invalid: u64,
}

impl Windower {
    pub fn new(epoch_ms: i64) -> Self {
        assert!(epoch_ms > 0, "epoch must be positive");
        Self {
            epoch_ms,
            reorder_epochs: DEFAULT_REORDER_EPOCHS,
            antenna_counts: HashMap::new(),
            open: BTreeMap::new(),
            newest: None,
            late_dropped: 0,
            invalid: 0,
        }
    }

    pub fn with_reorder_epochs(mut self, epochs: i64) -> Self {
        self.reorder_epochs = epochs.max(0);
        self
    }

    /// Fixes each reader's vector length. Samples naming an antenna beyond it
    /// are rejected.
    pub fn with_antenna_counts(mut self, counts: HashMap<String, usize>) -> Self {
        self.antenna_counts = counts;
        self
    }

    pub fn epoch_ms(&self) -> i64 {
        self.epoch_ms
    }

    pub fn late_dropped(&self) -> u64 {
        self.late_dropped
    }

    pub fn invalid(&self) -> u64 {
        self.invalid
    }

    pub fn window_index(&self, t: i64) -> i64 {
        t.div_euclid(self.epoch_ms)
    }

    /// Adds a sample and returns any windows that became final.
    pub fn push(&mut self, sample: &RssSample) -> Vec<TagWindow> {
        if sample.validate().is_err() {
            self.invalid += 1;
            return Vec::new();
        }
        let known = self.antenna_counts.get(&sample.reader_id).copied();
        if known.is_some_and(|n| sample.antenna >= n) {
            self.invalid += 1;
            return Vec::new();
        }
        let k = self.window_index(sample.t);
        if self.newest.is_some_and(|newest| k < newest - self.reorder_epochs) {
            self.late_dropped += 1;
            return Vec::new();
        }

        let slots = self
            .open
            .entry((k, sample.tag_id.clone()))
            .or_default()
            .entry(sample.reader_id.clone())
            .or_insert_with(|| vec![None; known.unwrap_or(0)]);
        if slots.len() <= sample.antenna {
            slots.resize(sample.antenna + 1, None);
        }
        let slot = &mut slots[sample.antenna];
        if slot.is_none_or(|(t, _)| sample.t >= t) {
            *slot = Some((sample.t, sample.rss));
        }

        self.advance_to_window(k)
    }

    /// Treats `t` as the current stream time and releases windows that are
    /// now beyond the reorder horizon.
    pub fn advance_to(&mut self, t: i64) -> Vec<TagWindow> {
        let k = self.window_index(t);
        self.advance_to_window(k)
    }

    fn advance_to_window(&mut self, k: i64) -> Vec<TagWindow> {
        let newest = self.newest.map_or(k, |n| n.max(k));
        self.newest = Some(newest);
        let horizon = newest - self.reorder_epochs;
        let mut ready = Vec::new();
        while let Some(entry) = self.open.first_entry() {
            if entry.key().0 >= horizon {
                break;
            }
            let ((idx, tag), readers) = entry.remove_entry();
            ready.push(self.build(idx, tag, readers));
        }
        ready
    }

    /// Releases every open window.
    pub fn flush(&mut self) -> Vec<TagWindow> {
        std::mem::take(&mut self.open)
            .into_iter()
            .map(|((idx, tag), readers)| self.build(idx, tag, readers))
            .collect()
    }

    fn build(&self, idx: i64, tag_id: String, readers: BTreeMap<String, Vec<Slot>>) -> TagWindow {
        let epoch = idx * self.epoch_ms;
        let vectors = readers
            .into_iter()
            .map(|(reader, slots)| {
                let readings = slots.into_iter().map(|s| s.map(|(_, rss)| rss)).collect();
                (reader, RssVector::new(epoch, readings))
            })
            .collect();
        TagWindow { tag_id, epoch, vectors }
    }
}

/// Windows a complete, finite stream.
pub fn window_all<'a, I>(samples: I, epoch_ms: i64, antenna_counts: HashMap<String, usize>) -> Vec<TagWindow>
where
    I: IntoIterator<Item = &'a RssSample>,
{
    let mut windower = Windower::new(epoch_ms)
        .with_reorder_epochs(i64::MAX / 4)
        .with_antenna_counts(antenna_counts);
    for s in samples {
        windower.push(s);
    }
    windower.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t: i64, tag: &str, ant: usize, rss: f64) -> RssSample {
        RssSample::new(t, tag, "r1", ant, rss)
    }

    #[test]
    fn record_uses_normative_field_names() {
        let line = s(1500, "P-1", 2, -61.25).to_line();
        assert_eq!(line, r#"{"t":1500,"tag":"P-1","reader":"r1","ant":2,"rss":-61.25}"#);
        assert_eq!(RssSample::from_line(&line).unwrap(), s(1500, "P-1", 2, -61.25));
    }

    #[test]
    fn append_then_scan_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rss.log");
        let mut log = SampleLog::open(&path).unwrap();
        log.append(&s(0, "a", 0, -60.0)).unwrap();
        log.append(&s(10, "a", 1, -61.0)).unwrap();
        let scan = log.scan().unwrap();
        assert_eq!(scan.samples.last(), Some(&s(10, "a", 1, -61.0)));
        assert_eq!(log.count(), 2);
        drop(log);
        assert_eq!(SampleLog::open(&path).unwrap().count(), 2);
    }

    #[test]
    fn append_rejects_invalid_sample() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = SampleLog::open(dir.path().join("rss.log")).unwrap();
        assert!(log.append(&s(0, "a", 0, f64::NAN)).is_err());
        assert_eq!(log.count(), 0);
        assert!(log.scan().unwrap().samples.is_empty());
    }

    #[test]
    fn malformed_line_is_skipped() {
        let text = format!(
            "{}\nnot json\n{{\"t\":1}}\n{}\n",
            s(0, "a", 0, -60.0).to_line(),
            s(5, "a", 0, -62.0).to_line()
        );
        let scan = read_records(text.as_bytes()).unwrap();
        assert_eq!(scan.samples.len(), 2);
        assert_eq!(scan.skipped.iter().map(|k| k.line).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn truncated_tail_loses_only_last_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rss.log");
        {
            let mut log = SampleLog::open(&path).unwrap();
            for i in 0..5 {
                log.append(&s(i * 100, "a", 0, -60.0)).unwrap();
            }
        }
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 7]).unwrap();
        let mut log = SampleLog::open(&path).unwrap();
        assert_eq!(log.count(), 4);
        log.append(&s(900, "a", 0, -59.0)).unwrap();
        let scan = log.scan().unwrap();
        assert!(scan.skipped.is_empty());
        assert_eq!(scan.samples.len(), 5);
        assert_eq!(scan.samples[4].t, 900);
    }

    #[test]
    fn compaction_drops_garbage_and_old_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rss.log");
        let text = format!(
            "{}\ngarbage\n{}\n",
            s(0, "a", 0, -60.0).to_line(),
            s(5000, "a", 0, -62.0).to_line()
        );
        std::fs::write(&path, text).unwrap();
        let stats = compact(&path, Some(1000)).unwrap();
        assert_eq!(stats, CompactStats { kept: 1, malformed: 1, expired: 1 });
        let scan = read_log(&path).unwrap();
        assert_eq!(scan.samples, vec![s(5000, "a", 0, -62.0)]);
        assert!(scan.skipped.is_empty());
    }

    #[test]
    fn replay_unreadable_log_fails() {
        assert!(replay("/nonexistent/dir/rss.log", ReplaySpeed::Unlimited).is_err());
    }

    #[test]
    fn replay_unlimited_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rss.log");
        let samples: Vec<_> = (0..50).map(|i| s(i * 500, "a", (i % 4) as usize, -60.0 - i as f64)).collect();
        write_records(File::create(&path).unwrap(), &samples).unwrap();
        let out: Vec<_> = replay(&path, ReplaySpeed::Unlimited).unwrap().collect();
        assert_eq!(out, samples);
        std::fs::write(&path, "").unwrap();
        assert_eq!(replay(&path, ReplaySpeed::Unlimited).unwrap().count(), 0);
    }

    #[test]
    fn last_sample_per_antenna_wins() {
        let w = window_all(
            &[s(100, "a", 0, -60.0), s(300, "a", 0, -65.0), s(200, "a", 1, -70.0)],
            500,
            HashMap::new(),
        );
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].vectors["r1"].readings, vec![Some(-65.0), Some(-70.0)]);
    }

    #[test]
    fn boundary_sample_opens_next_window() {
        let w = window_all(&[s(499, "a", 0, -60.0), s(500, "a", 0, -61.0)], 500, HashMap::new());
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].epoch, w[1].epoch), (0, 500));
        assert_eq!(w[1].vectors["r1"].readings, vec![Some(-61.0)]);
    }

    #[test]
    fn known_antenna_count_pads_and_rejects() {
        let counts = HashMap::from([("r1".to_string(), 4)]);
        let mut win = Windower::new(500).with_antenna_counts(counts);
        assert!(win.push(&s(0, "a", 7, -60.0)).is_empty());
        assert_eq!(win.invalid(), 1);
        win.push(&s(0, "a", 1, -60.0));
        let out = win.flush();
        assert_eq!(out[0].vectors["r1"].readings, vec![None, Some(-60.0), None, None]);
    }

    #[test]
    fn streaming_release_and_late_drop() {
        let mut win = Windower::new(500);
        assert!(win.push(&s(0, "a", 0, -60.0)).is_empty());
        assert!(win.push(&s(1000, "a", 0, -60.0)).is_empty());
        let released = win.push(&s(1500, "a", 0, -60.0));
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].epoch, 0);
        assert!(win.push(&s(200, "a", 0, -55.0)).is_empty());
        assert_eq!(win.late_dropped(), 1);
        // window 1 is still inside the reorder horizon
        win.push(&s(600, "b", 0, -58.0));
        assert_eq!(win.late_dropped(), 1);
        let rest = win.flush();
        assert_eq!(rest.iter().map(|w| w.epoch).collect::<Vec<_>>(), vec![500, 1000, 1500]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn every_sample_lands_in_exactly_one_window(
                raw in proptest::collection::vec((0i64..20_000, 0usize..3, 0usize..4), 1..200)
            ) {
                let samples: Vec<_> = raw
                    .iter()
                    .enumerate()
                    .map(|(i, (t, tag, ant))| RssSample::new(*t, format!("t{tag}"), "r1", *ant, -50.0 - i as f64))
                    .collect();
                let mut win = Windower::new(500);
                let mut windows = Vec::new();
                for s in &samples {
                    windows.extend(win.push(s));
                }
                windows.extend(win.flush());

                // Independent replay of the acceptance rule.
                let mut newest: Option<i64> = None;
                let mut expected = std::collections::HashSet::new();
                let mut dropped = 0u64;
                for s in &samples {
                    let k = s.t.div_euclid(500);
                    if newest.is_some_and(|n| k < n - DEFAULT_REORDER_EPOCHS) {
                        dropped += 1;
                        continue;
                    }
                    newest = Some(newest.map_or(k, |n| n.max(k)));
                    expected.insert((k * 500, s.tag_id.clone(), s.antenna));
                }
                prop_assert_eq!(win.late_dropped(), dropped);

                let mut slots = std::collections::HashSet::new();
                let mut keys = std::collections::HashSet::new();
                for w in &windows {
                    prop_assert!(keys.insert((w.epoch, w.tag_id.clone())));
                    for v in w.vectors.values() {
                        for (a, r) in v.readings.iter().enumerate() {
                            if r.is_some() {
                                slots.insert((w.epoch, w.tag_id.clone(), a));
                            }
                        }
                    }
                }
                prop_assert_eq!(slots, expected);
            }
        }
    }
}
