use std::path::{Path, PathBuf};
use std::process::Command;

use protchat_core::corpus::{parse_fasta, parse_instruction_lines, parse_pdb_chain, serialize_fasta, serialize_instruction_lines};
use protchat_core::{Error, ParseError};

use crate::util::{ensure, fail, toy_run, Outcome};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read(name: &str) -> Result<Vec<u8>, String> {
    std::fs::read(fixture(name)).map_err(|e| format!("{name}: {e}"))
}

fn round_trips() -> Result<usize, String> {
    let seqs = parse_fasta(&read("valid.fasta")?).map_err(fail)?;
    let ids: Vec<&str> = seqs.iter().map(|s| s.id()).collect();
    ensure!(ids == ["sp|P1|KIN_TEST", "p2", "p3"], "FASTA ids {ids:?}");
    ensure!(seqs[0].residues() == "MKVLAAGICWDEFHKLMNPQRSTVWY", "FASTA residues {}", seqs[0].residues());
    let text = serialize_fasta(&seqs);
    let again = parse_fasta(text.as_bytes()).map_err(fail)?;
    ensure!(again == seqs, "FASTA parse(serialize(x)) differs from x");
    ensure!(serialize_fasta(&again) == text, "FASTA serialization is not a fixed point");

    let text = String::from_utf8(read("valid.jsonl")?).map_err(fail)?;
    let recs = parse_instruction_lines(&text).map_err(fail)?;
    ensure!(recs.len() == 3, "{} instruction records", recs.len());
    ensure!(recs[0].ss8.as_deref() == Some("HHHEECC"), "ss8 {:?}", recs[0].ss8);
    ensure!(recs[1].sequence.residues() == "ACDW", "residues {}", recs[1].sequence.residues());
    let out = serialize_instruction_lines(&recs);
    let again = parse_instruction_lines(&out).map_err(fail)?;
    ensure!(again == recs, "instruction parse(serialize(x)) differs from x");
    ensure!(serialize_instruction_lines(&again) == out, "instruction serialization is not a fixed point");
    Ok(seqs.len() + recs.len())
}

fn pdb_chains() -> Result<(), String> {
    let bytes = read("crafted.pdb")?;
    for (chain, id, want) in [('A', "1ABC_A", "MKVGXW"), ('B', "1ABC_B", "AC")] {
        let s = parse_pdb_chain(&bytes, chain).map_err(fail)?;
        ensure!(s.id() == id && s.residues() == want, "chain {chain}: {} {} vs {id} {want}", s.id(), s.residues());
    }
    ensure!(
        matches!(parse_pdb_chain(&bytes, 'C'), Err(Error::NotFound(_))),
        "absent chain C was not reported"
    );
    Ok(())
}

/// Malformed fixtures with the line each error must point at.
const MALFORMED: [(&str, usize); 11] = [
    ("bad_residue.fasta", 3),
    ("orphan_sequence.fasta", 1),
    ("empty_record.fasta", 1),
    ("missing_id.fasta", 3),
    ("bad_coordinate.pdb", 3),
    ("short_atom.pdb", 2),
    ("bad_json.jsonl", 2),
    ("missing_sequence.jsonl", 3),
    ("ss8_length.jsonl", 1),
    ("empty_answer.jsonl", 2),
    ("unknown_field.jsonl", 1),
];

fn parse(name: &str) -> Result<(), Error> {
    let bytes = std::fs::read(fixture(name)).map_err(Error::from)?;
    if name.ends_with(".fasta") {
        parse_fasta(&bytes).map(drop)
    } else if name.ends_with(".pdb") {
        parse_pdb_chain(&bytes, 'A').map(drop)
    } else {
        parse_instruction_lines(&String::from_utf8_lossy(&bytes)).map(drop)
    }
}

fn located_errors() -> Result<(), String> {
    for (name, line) in MALFORMED {
        let got = match parse(name) {
            Ok(()) => return Err(format!("{name} parsed without error")),
            Err(Error::Parse(ParseError::Line { line, .. } | ParseError::Field { line, .. })) => line,
            Err(e) => return Err(format!("{name}: unlocated error {e}")),
        };
        ensure!(got == line, "{name}: error at line {got}, expected {line}");
    }
    Ok(())
}

/// Runs the binary on every malformed fixture; each must exit nonzero and
/// name the failing line on stderr.
fn cli_exits() -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(fail)?;
    toy_run(dir.path(), 4, 1, &[])?;
    let cfg = dir.path().join("run.toml");
    let bin = env!("CARGO_BIN_EXE_protchat");
    let mut checked = 0;
    for (name, line) in MALFORMED {
        let path = fixture(name);
        let mut cmd = Command::new(bin);
        cmd.arg("-c").arg(&cfg);
        let out_dir = dir.path().join(format!("emb-{name}"));
        if name.ends_with(".jsonl") {
            cmd.arg("--set").arg(format!("data.instructions={:?}", path.display().to_string())).arg("pretrain");
        } else {
            cmd.arg("precompute").arg("--out").arg(&out_dir).args(["--chain", "A"]).arg(&path);
        }
        let out = cmd.output().map_err(fail)?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        ensure!(
            out.status.code().is_some_and(|c| c != 0),
            "{name}: exit status {:?}",
            out.status
        );
        ensure!(stderr.contains(&format!("line {line}")), "{name}: stderr does not locate line {line}: {stderr}");
        ensure!(!out_dir.join("manifest.tsv").exists(), "{name}: manifest written despite the error");
        checked += 1;
    }

    let out = Command::new(bin)
        .arg("-c")
        .arg(&cfg)
        .arg("precompute")
        .arg("--out")
        .arg(dir.path().join("emb-ok"))
        .args(["--chain", "B"])
        .arg(fixture("valid.fasta"))
        .arg(fixture("crafted.pdb"))
        .output()
        .map_err(fail)?;
    ensure!(out.status.success(), "valid precompute failed: {}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("emb-ok/manifest.tsv")).map_err(fail)?;
    ensure!(manifest.lines().count() == 4, "manifest:\n{manifest}");
    Ok(checked)
}

pub fn run() -> Outcome {
    let n = round_trips()?;
    pdb_chains()?;
    located_errors()?;
    let exits = cli_exits()?;
    Ok(format!(
        "{n} records round-trip, 2 PDB chains match, {} malformed fixtures located, {exits} nonzero CLI exits",
        MALFORMED.len()
    ))
}
