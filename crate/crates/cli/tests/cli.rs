use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use regionstyle::{save_weights, stylize, Image, Mask, MaskPair, MaskPairSet, ModelParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regionstyle"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn two_tone(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, x| if x < w / 2 { [0.8, 0.2, 0.2] } else { [0.2, 0.2, 0.8] }).unwrap()
}

fn gradient(h: usize, w: usize) -> Image {
    let img = Image::from_fn(h, w, |y, x| [y as f32 / h as f32, x as f32 / w as f32, 0.3]).unwrap();
    Image::from_png_bytes(&img.to_png_bytes()).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        save_weights(&ModelParams::toy(0), dir.path().join("toy.nstw")).unwrap();
        gradient(64, 64).save_png(dir.path().join("content.png")).unwrap();
        two_tone(64, 64).save_png(dir.path().join("style.png")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn manifest(&self, pairs: &[(&str, &Mask, &str, &Mask)]) -> std::path::PathBuf {
        let mut entries = Vec::new();
        for (cn, cm, sn, sm) in pairs {
            cm.save_png(self.path(cn)).unwrap();
            sm.save_png(self.path(sn)).unwrap();
            entries.push(serde_json::json!({ "content_mask": cn, "style_mask": sn }));
        }
        let path = self.path("pairs.json");
        std::fs::write(&path, serde_json::to_vec(&serde_json::json!({ "pairs": entries })).unwrap()).unwrap();
        path
    }

    fn stylize(&self, manifest: Option<&Path>, out: &str) -> Output {
        let mut args = vec![
            "stylize".to_owned(),
            "--content".into(),
            p(&self.path("content.png")).into(),
            "--style".into(),
            p(&self.path("style.png")).into(),
            "--weights".into(),
            p(&self.path("toy.nstw")).into(),
            "--out".into(),
            p(&self.path(out)).into(),
        ];
        if let Some(m) = manifest {
            args.extend(["--pairs".into(), p(m).into()]);
        }
        bin().args(&args).output().unwrap()
    }
}

#[test]
fn stylize_zero_pairs_writes_baseline() {
    let f = Fixture::new();
    let manifest = f.manifest(&[]);
    let o = f.stylize(Some(&manifest), "out.png");
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = stylize(&gradient(64, 64), &two_tone(64, 64), &MaskPairSet::new(), &ModelParams::toy(0)).unwrap();
    assert_eq!(std::fs::read(f.path("out.png")).unwrap(), expected.to_png_bytes());
}

#[test]
fn stylize_with_pairs_matches_library() {
    let f = Fixture::new();
    let c = Mask::from_fn(64, 64, |y, _| y < 32);
    let s = Mask::from_fn(64, 64, |_, x| x >= 32);
    let manifest = f.manifest(&[("c0.png", &c, "s0.png", &s)]);
    let o = f.stylize(Some(&manifest), "out.png");
    assert!(o.status.success(), "{}", stderr(&o));
    let pairs: MaskPairSet = vec![MaskPair::new(c, s)].into();
    let expected = stylize(&gradient(64, 64), &two_tone(64, 64), &pairs, &ModelParams::toy(0)).unwrap();
    assert_eq!(std::fs::read(f.path("out.png")).unwrap(), expected.to_png_bytes());
}

#[test]
fn missing_weights_is_format_error() {
    let f = Fixture::new();
    std::fs::remove_file(f.path("toy.nstw")).unwrap();
    let o = f.stylize(None, "out.png");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FormatError"));
}

#[test]
fn mask_too_small_exits_3_with_pair_index() {
    let f = Fixture::new();
    let full = Mask::full(64, 64);
    let thin = Mask::from_fn(64, 64, |y, _| y == 10);
    let manifest = f.manifest(&[("c0.png", &full, "s0.png", &full), ("c1.png", &full, "s1.png", &thin)]);
    let o = f.stylize(Some(&manifest), "out.png");
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("MaskTooSmall") && err.contains("pair 1"), "{err}");
}

#[test]
fn segment_half_mask_and_box() {
    let f = Fixture::new();
    two_tone(16, 16).save_png(f.path("tt.png")).unwrap();
    let o = run(&["segment", "--image", p(&f.path("tt.png")), "--point", "3,4,1", "--out", p(&f.path("m.png"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(Mask::load_png(f.path("m.png")).unwrap(), Mask::from_fn(16, 16, |_, x| x < 8));

    let o = run(&[
        "segment", "--image", p(&f.path("tt.png")), "--point", "3,4,1", "--box", "2,2,12,5", "--out", p(&f.path("b.png")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = Mask::from_fn(16, 16, |y, x| (2..=5).contains(&y) && (2..8).contains(&x));
    assert_eq!(Mask::load_png(f.path("b.png")).unwrap(), expected);
}

#[test]
fn segment_contour() {
    let f = Fixture::new();
    two_tone(16, 16).save_png(f.path("tt.png")).unwrap();
    let o = run(&["segment", "--image", p(&f.path("tt.png")), "--contour", "2,2,6,2,6,6,2,6", "--out", p(&f.path("m.png"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = Mask::from_fn(16, 16, |y, x| (2..6).contains(&y) && (2..6).contains(&x));
    assert_eq!(Mask::load_png(f.path("m.png")).unwrap(), expected);
}

#[test]
fn segment_without_foreground_exits_2() {
    let f = Fixture::new();
    two_tone(16, 16).save_png(f.path("tt.png")).unwrap();
    let o = run(&["segment", "--image", p(&f.path("tt.png")), "--point", "3,4,0", "--out", p(&f.path("m.png"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NoForegroundEvidence"));
}

#[test]
fn serve_refuses_bad_weights() {
    let o = run(&["serve", "--port", "0", "--weights", "/nonexistent/w.nstw"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FormatError"));
}

#[test]
fn serve_answers_healthz_and_stops_on_sigint() {
    let f = Fixture::new();
    let mut child = bin()
        .args(["serve", "--port", "0", "--weights", p(&f.path("toy.nstw"))])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    let mut stream = TcpStream::connect(&addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(stream, "GET /healthz HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n").unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    let sent = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(sent.success());
    assert!(child.wait().unwrap().success());
}
