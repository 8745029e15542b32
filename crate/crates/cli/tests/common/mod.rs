#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blindeval::audio::write_wav;
use blindeval::manifest::{anonymize_sources, project_public, AudioRoots};
use blindeval::scoring::full_report;
use blindeval::{
    AudioBuffer, DecisionRecord, Label, Manifest, RunIngest, SampleRecord, SourceDescriptor, Split, Task, Variant,
};
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const BIN: &str = env!("CARGO_BIN_EXE_blindeval");
pub const TOKEN: &str = "operator-secret";

pub fn blindeval(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn blindeval")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// (source_id, kind, display_name, public, samples)
pub const FIXTURE_SOURCES: [(&str, Label, &str, bool, usize); 4] = [
    ("elevenlabs", Label::Generated, "ElevenLabs Multilingual", true, 100),
    ("parler", Label::Generated, "Parler Expressive", false, 100),
    ("arabic", Label::Real, "Arabic Broadcast Speech", false, 20),
    ("english", Label::Real, "English Audiobook Reading", true, 380),
];

/// In-memory private manifest: 200 generated and 400 real samples.
pub fn fixture_manifest() -> Manifest {
    let mut sources = Vec::new();
    let mut samples = Vec::new();
    for (id, kind, display, public, n) in FIXTURE_SOURCES {
        sources.push(SourceDescriptor {
            source_id: id.into(),
            kind,
            display_name: display.into(),
            native_sample_rate_hz: 16000,
            language: None,
            in_public_split: public,
            voice_cloning: (kind == Label::Generated).then_some(true),
        });
        for i in 0..n {
            samples.push(SampleRecord {
                sample_id: format!("{id}{i:04}"),
                source_id: id.into(),
                label: kind,
                file_path: format!("{id}/{i}.wav"),
                duration_s: 1.0,
                sample_rate_hz: 16000,
                variant: Variant::original(),
                parent_sample_id: None,
            });
        }
    }
    Manifest { task: Task::Task1, split: Split::Private, seed: 0, roots: AudioRoots::default(), sources, samples }
}

/// Decisions where exactly `correct[source]` samples of each source are
/// classified correctly (the first ones in manifest order). Scores agree
/// with the decisions and vary within each side of 0.5.
pub fn decisions(m: &Manifest, correct: &BTreeMap<&str, usize>) -> Vec<DecisionRecord> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    m.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = seen.entry(s.source_id.as_str()).or_default();
            let right = *k < correct.get(s.source_id.as_str()).copied().unwrap_or(0);
            *k += 1;
            let decision = match (s.label, right) {
                (Label::Generated, true) | (Label::Real, false) => Label::Generated,
                _ => Label::Real,
            };
            let jitter = ((i * 7919) % 1000) as f64 / 2000.0;
            let score = if decision == Label::Generated { 0.5 + jitter } else { jitter };
            DecisionRecord { sample_id: s.sample_id.clone(), decision, score, inference_time_s: 0.01 }
        })
        .collect()
}

/// Spread `tp` correct generated and `tn` correct real decisions over the
/// fixture sources, filling sources in order.
pub fn spread(m: &Manifest, tp: usize, tn: usize) -> BTreeMap<&str, usize> {
    let mut left = BTreeMap::from([(Label::Generated, tp), (Label::Real, tn)]);
    m.sources
        .iter()
        .map(|s| {
            let n = m.samples_of(&s.source_id).count();
            let budget = left.get_mut(&s.kind).unwrap();
            let take = (*budget).min(n);
            *budget -= take;
            (s.source_id.as_str(), take)
        })
        .collect()
}

pub fn at_minute(minute: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap() + Duration::minutes(minute)
}

/// A run whose private TPR/TNR equal the given rates exactly on the fixture.
pub fn fixture_run(team: &str, key: &str, minute: i64, tpr: f64, tnr: f64) -> RunIngest {
    let m = fixture_manifest();
    let tp = (tpr * 200.0).round() as usize;
    let tn = (tnr * 400.0).round() as usize;
    let records = decisions(&m, &spread(&m, tp, tn));
    let anon = anonymize_sources(&m, b"fixture-salt");
    RunIngest {
        team_id: team.into(),
        task: Task::Task1,
        idempotency_key: key.into(),
        timestamp: at_minute(minute),
        public: full_report(&records, &project_public(&m), Some(&anon)).unwrap(),
        private: full_report(&records, &m, None).unwrap(),
    }
}

/// Team, TPR, TNR, printed BAC for the unprocessed-detection task.
pub const REFERENCE_TASK1: [(&str, f64, f64, f64); 5] = [
    ("ISP", 0.79, 0.95, 0.87),
    ("VIP", 0.74, 0.80, 0.77),
    ("JAI", 0.46, 0.90, 0.68),
    ("ANO", 0.77, 0.71, 0.74),
    ("DMF", 0.86, 0.49, 0.67),
];

pub const RATE: u32 = 16000;

fn chirp(f0: f64, f1: f64, seconds: f64) -> Vec<f32> {
    let n = (seconds * RATE as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE as f64;
            let phase = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / seconds * t * t);
            (0.4 * phase.sin()) as f32
        })
        .collect()
}

fn write_source(dir: &Path, display: &str, public: bool, clips: impl Iterator<Item = Vec<f32>>) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("source.toml"), format!("display_name = \"{display}\"\npublic = {public}\n")).unwrap();
    for (i, samples) in clips.enumerate() {
        write_wav(&dir.join(format!("clip{i:03}.wav")), &AudioBuffer::mono(samples, RATE).unwrap()).unwrap();
    }
}

pub struct ToyCorpus {
    pub real: PathBuf,
    pub generated: PathBuf,
    pub display_names: Vec<&'static str>,
    pub source_ids: Vec<&'static str>,
}

/// Two real sources (tones, white noise) and two generated sources (rising
/// and falling chirps), `clips` clips each.
pub fn toy_corpus(root: &Path, clips: usize, seconds: f64) -> ToyCorpus {
    let real = root.join("real");
    let generated = root.join("generated");
    let n = (seconds * RATE as f64) as usize;
    write_source(
        &real.join("tone"),
        "Studio Tone Library",
        true,
        (0..clips).map(|i| blindeval::audio::sine(200.0 + 37.0 * i as f64, 0.4, seconds, RATE)),
    );
    write_source(
        &real.join("noise"),
        "Field Noise Archive",
        false,
        (0..clips).map(|i| {
            let mut rng = StdRng::seed_from_u64(i as u64);
            (0..n).map(|_| rng.random_range(-0.3f32..0.3)).collect()
        }),
    );
    write_source(
        &generated.join("chirp_up"),
        "Rising Chirp Synthesizer",
        true,
        (0..clips).map(|i| chirp(300.0 + 10.0 * i as f64, 3000.0, seconds)),
    );
    write_source(
        &generated.join("chirp_down"),
        "Falling Chirp Synthesizer",
        false,
        (0..clips).map(|i| chirp(3500.0 - 10.0 * i as f64, 500.0, seconds)),
    );
    ToyCorpus {
        real,
        generated,
        display_names: vec![
            "Studio Tone Library",
            "Field Noise Archive",
            "Rising Chirp Synthesizer",
            "Falling Chirp Synthesizer",
        ],
        source_ids: vec!["tone", "noise", "chirp_up", "chirp_down"],
    }
}

/// Python detector following the contract: optionally tries to connect to
/// `127.0.0.1:<port>` first, logging the outcome, then calls every file
/// real.
pub fn python_probe(dir: &Path, connect_port: Option<u16>) -> PathBuf {
    let connect = match connect_port {
        Some(port) => format!(
            "try:\n    socket.create_connection(('127.0.0.1', {port}), timeout=3)\n    print('connect succeeded', file=sys.stderr)\nexcept OSError as e:\n    print('connect failed:', e, file=sys.stderr)\n"
        ),
        None => String::new(),
    };
    let script = format!(
        "import socket, sys, os\n{connect}data, out = sys.argv[1], sys.argv[2]\nnames = [l.strip() for l in open(os.path.join(data, 'files.txt')) if l.strip()]\nwith open(out, 'w') as f:\n    f.write('file,decision,score,inference_time_s\\n')\n    for n in names:\n        f.write(n + ',real,0.0,0.0\\n')\n"
    );
    let path = dir.join(if connect_port.is_some() { "connect_probe.py" } else { "all_real.py" });
    std::fs::write(&path, script).unwrap();
    path
}
