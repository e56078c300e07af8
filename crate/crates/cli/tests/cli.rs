use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use splatar_core::driving::read_stream;
use splatar_core::render::{quantize, Rasterizer, RenderTarget, SplatView};
use splatar_core::CanonicalGaussianAvatar;
use tempfile::TempDir;

fn splatar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatar")).args(args).output().expect("spawn splatar")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Runs a command that must succeed and returns its stdout as JSON.
fn ok(args: &[&str]) -> Value {
    let out = splatar(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Rig path plus its vertex and face counts.
    fn rig(&self) -> (PathBuf, u64, u64) {
        let rig = self.path("rig.gava");
        let v = ok(&["synth", "rig", "-o", p(&rig), "--joints", "3", "--level", "1"]);
        (rig, v["vertices"].as_u64().unwrap(), v["faces"].as_u64().unwrap())
    }

    fn asset(&self, iterations: u32) -> PathBuf {
        let (rig, ..) = self.rig();
        let asset = self.path(&format!("avatar{iterations}.gava"));
        ok(&["bake", p(&rig), "--iterations", &iterations.to_string(), "-o", p(&asset)]);
        asset
    }
}

fn read_ppm(path: &Path) -> (u32, u32, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        fields.push(String::from_utf8(bytes[start..i].to_vec()).unwrap());
    }
    assert_eq!(fields[0], "P6");
    let (w, h) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    (w, h, bytes[i + 1..].to_vec())
}

#[test]
fn bake_point_counts_follow_subdivision() {
    let fx = Fixture::new();
    let (rig, vertices, faces) = fx.rig();
    let flat = fx.path("n0.gava");
    let v = ok(&["bake", p(&rig), "--iterations", "0", "-o", p(&flat)]);
    assert_eq!(v["points"].as_u64(), Some(vertices));
    assert_eq!(v["rig_vertices"].as_u64(), Some(vertices));

    // closed triangle mesh: E = 3F / 2
    let once = fx.path("n1.gava");
    let v = ok(&["bake", p(&rig), "--iterations", "1", "-o", p(&once)]);
    assert_eq!(v["points"].as_u64(), Some(vertices + faces * 3 / 2));
}

#[test]
fn rendering_the_same_stream_twice_is_byte_identical() {
    let fx = Fixture::new();
    let asset = fx.asset(1);
    let stream = fx.path("stream.jsonl");
    ok(&["--seed", "7", "synth", "stream", p(&asset), "-o", p(&stream), "--frames", "3", "--size", "48x40"]);
    let (a, b) = (fx.path("a"), fx.path("b"));
    let va = ok(&["render", p(&asset), p(&stream), "-o", p(&a), "--size", "48x40"]);
    ok(&["--threads", "1", "render", p(&asset), p(&stream), "-o", p(&b), "--size", "48x40"]);
    assert_eq!(va["frames"], 3);
    for i in 0..3 {
        for name in [format!("frame_{i:05}.png"), format!("frame_{i:05}_alpha.png")] {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn seeded_synthesis_is_deterministic() {
    let fx = Fixture::new();
    let asset = fx.asset(0);
    let (s1, s2, s3) = (fx.path("s1"), fx.path("s2"), fx.path("s3"));
    ok(&["--seed", "3", "synth", "stream", p(&asset), "-o", p(&s1)]);
    ok(&["--seed", "3", "synth", "stream", p(&asset), "-o", p(&s2)]);
    ok(&["--seed", "4", "synth", "stream", p(&asset), "-o", p(&s3)]);
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
    assert_ne!(fs::read(&s1).unwrap(), fs::read(&s3).unwrap());
}

#[test]
fn identity_frame_matches_canonical_render() {
    let fx = Fixture::new();
    let asset = fx.asset(1);
    let stream = fx.path("identity.jsonl");
    ok(&["synth", "stream", p(&asset), "-o", p(&stream), "--frames", "1", "--size", "64x64", "--identity"]);
    let out = fx.path("out");
    ok(&["render", p(&asset), p(&stream), "-o", p(&out), "--size", "64x64", "--ppm"]);
    let (w, h, rendered) = read_ppm(&out.join("frame_00000.ppm"));
    assert_eq!((w, h), (64, 64));

    let avatar = CanonicalGaussianAvatar::load(&asset).unwrap();
    let frame = read_stream(fs::read_to_string(&stream).unwrap().as_bytes()).next().unwrap().unwrap();
    let camera = frame.camera.to_camera(64, 64).unwrap();
    let view = SplatView {
        positions: &avatar.positions,
        rotations: &avatar.rotations,
        scales: &avatar.scales,
        colors: &avatar.colors,
        opacities: &avatar.opacities,
    };
    let mut target = RenderTarget::new(64, 64, [0.0; 3]);
    Rasterizer::new().render(&view, &camera, &mut target).unwrap();
    let covered = target.alpha.iter().filter(|&&a| a > 0.1).count();
    assert!(covered > 100, "avatar barely visible: {covered} pixels");
    let expected: Vec<u8> = target.rgb.iter().map(|&v| quantize(v)).collect();
    let worst = rendered.iter().zip(&expected).map(|(&a, &b)| a.abs_diff(b)).max().unwrap();
    assert!(worst <= 1, "identity frame differs from canonical render by {worst} levels");
}

#[test]
fn oracle_check_passes_on_random_frames() {
    let fx = Fixture::new();
    let asset = fx.asset(1);
    let stream = fx.path("stream.jsonl");
    ok(&["--seed", "11", "synth", "stream", p(&asset), "-o", p(&stream), "--frames", "10", "--size", "40x32"]);
    let v = ok(&["render", p(&asset), p(&stream), "-o", p(&fx.path("out")), "--size", "40x32", "--oracle"]);
    assert_eq!(v["frames"], 10);
    assert!(v["oracle_max_abs_diff"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn bench_reports_rates_and_rejects_zero_frames() {
    let fx = Fixture::new();
    let asset = fx.path("avatar.gava");
    ok(&["synth", "avatar", "-o", p(&asset), "--points", "500", "--n-expr", "4", "--joints", "3"]);
    let v = ok(&["bench", p(&asset), "--frames", "3", "--size", "32x32"]);
    assert!(v.is_object());

    let out = splatar(&["bench", p(&asset), "--frames", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frames must be >= 1"));
}

#[test]
fn validate_exit_codes() {
    let fx = Fixture::new();
    let asset = fx.asset(0);
    let v = ok(&["validate", p(&asset)]);
    assert_eq!(v["valid"], true);

    let mut avatar = CanonicalGaussianAvatar::load(&asset).unwrap();
    avatar.opacities[0] = 1.5;
    avatar.scales[1] = [0.0, 0.01, 0.01];
    let bad = fx.path("bad.gava");
    avatar.save(&bad).unwrap();
    let out = splatar(&["validate", p(&bad)]);
    assert_eq!(code(&out), 2);
    let report: Value = serde_json::from_slice(&out.stdout).expect("report is JSON");
    assert_eq!(report["valid"], false);
    let sections: Vec<&str> = report["violations"].as_array().unwrap().iter().map(|v| v["section"].as_str().unwrap()).collect();
    assert!(sections.contains(&"opacities") && sections.contains(&"scales"), "{sections:?}");

    let bytes = fs::read(&asset).unwrap();
    let cut = fx.path("cut.gava");
    fs::write(&cut, &bytes[..bytes.len() - 4]).unwrap();
    let out = splatar(&["validate", p(&cut)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_stream_reports_line_number() {
    let fx = Fixture::new();
    let asset = fx.asset(0);
    let stream = fx.path("good.jsonl");
    ok(&["synth", "stream", p(&asset), "-o", p(&stream), "--frames", "2", "--size", "32x32"]);
    let mut text = fs::read_to_string(&stream).unwrap();
    text.push_str("{\"theta\": [oops]}\n");
    let broken = fx.path("broken.jsonl");
    fs::write(&broken, text).unwrap();
    let out = splatar(&["render", p(&asset), p(&broken), "-o", p(&fx.path("out")), "--size", "32x32"]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn missing_files_are_io_errors() {
    let fx = Fixture::new();
    let missing = fx.path("nope.gava");
    assert_eq!(code(&splatar(&["validate", p(&missing)])), 1);
    assert_eq!(code(&splatar(&["bake", p(&missing), "-o", p(&fx.path("x.gava"))])), 1);
    let asset = fx.asset(0);
    let out = splatar(&["render", p(&asset), p(&fx.path("none.jsonl")), "-o", p(&fx.path("out"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn bad_arguments_are_rejected() {
    let fx = Fixture::new();
    let asset = fx.asset(0);
    let stream = fx.path("s.jsonl");
    ok(&["synth", "stream", p(&asset), "-o", p(&stream), "--frames", "1"]);
    let out = splatar(&["render", p(&asset), p(&stream), "-o", p(&fx.path("o")), "--size", "0x4"]);
    assert_ne!(code(&out), 0);
    let out = splatar(&["--threads", "0", "validate", p(&asset)]);
    assert_eq!(code(&out), 2);
    // pose width in the stream does not match this asset's joints
    let other = fx.path("other.gava");
    ok(&["synth", "avatar", "-o", p(&other), "--points", "50", "--n-expr", "2", "--joints", "7"]);
    let out = splatar(&["render", p(&other), p(&stream), "-o", p(&fx.path("o2"))]);
    assert_eq!(code(&out), 2);
}
