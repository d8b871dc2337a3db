use std::path::Path;
use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/vtalab.h");

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(HEADER).unwrap();
    for name in [
        "vta_last_error",
        "vta_scene_generate",
        "vta_scene_sample_count",
        "vta_scene_sample_rate",
        "vta_scene_copy_audio",
        "vta_scene_caption",
        "vta_scene_free",
        "vta_dataset_synth",
        "vta_dataset_save",
        "vta_dataset_load",
        "vta_dataset_len",
        "vta_dataset_scene",
        "vta_dataset_free",
        "vta_model_load",
        "vta_model_generate",
        "vta_model_free",
        "vta_av_align",
        "vta_frechet_distance",
        "vta_cli_run",
        "typedef struct VtaScene VtaScene",
        "#define VTA_ERR_BUFFER 6",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(probe.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"vtalab.h\"\nint main(void) { VtaScene *s = 0; size_t n = 0; \
         return vta_scene_sample_count(s, &n) == VTA_OK; }\n",
    )
    .unwrap();
    let include = Path::new(HEADER).parent().unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
