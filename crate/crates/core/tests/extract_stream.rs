use melanoscope_core::decision::Verdict;
use melanoscope_core::synthgen::{generate_slide, SynthSpec};
use melanoscope_core::tiling::{extract_patch, extract_patches, PatchRecord};
use melanoscope_core::{open_slide, read_region, Error, RgbTile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(x: u32, y: u32, level: usize, size_px: u32) -> PatchRecord {
    PatchRecord {
        slide_id: "s".into(),
        x,
        y,
        level,
        size_px,
        ground_label: None,
        qualifying_fraction: 1.0,
    }
}

#[test]
fn streamed_tiles_equal_random_access_reads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::random("stream", 1500, 1100, 3, 5, Verdict::Melanoma);
    let out = generate_slide(&spec, dir.path()).unwrap();
    let slide = open_slide(&out.slide_dir).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<PatchRecord> = (0..120)
        .map(|_| {
            let level = rng.random_range(0..3);
            let ds = 1u32 << level;
            let (w, h) = slide.level_dimensions(level).unwrap();
            let (lx, ly) = (rng.random_range(0..w), rng.random_range(0..h));
            record(lx * ds, ly * ds, level, rng.random_range(1..=300))
        })
        .collect();

    let mut got: Vec<Option<RgbTile>> = vec![None; records.len()];
    let stats = extract_patches(&slide, &records, |i, tile| {
        assert!(got[i].is_none(), "patch {i} delivered twice");
        got[i] = Some(tile);
        Ok(())
    })
    .unwrap();
    assert_eq!(stats.patches, records.len());

    for (rec, tile) in records.iter().zip(got) {
        let tile = tile.expect("every patch delivered");
        let ds = 1i64 << rec.level;
        let want = read_region(
            &slide,
            rec.level,
            i64::from(rec.x) / ds,
            i64::from(rec.y) / ds,
            rec.size_px,
            rec.size_px,
        )
        .unwrap();
        assert_eq!(tile.pixels, want.pixels, "{rec:?}");
        assert_eq!(extract_patch(&slide, rec).unwrap().pixels, want.pixels);
    }
}

#[test]
fn documented_patch_matches_region_read() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::random("doc", 1024, 1024, 1, 2, Verdict::BenignNevus);
    let slide = open_slide(generate_slide(&spec, dir.path()).unwrap().slide_dir).unwrap();
    let rec = record(512, 256, 0, 256);
    let tile = extract_patch(&slide, &rec).unwrap();
    assert_eq!(tile.pixels, read_region(&slide, 0, 512, 256, 256, 256).unwrap().pixels);
    assert_eq!(tile.pixels, extract_patch(&slide, &rec).unwrap().pixels);
}

#[test]
fn out_of_bounds_records_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::random("oob", 512, 512, 2, 3, Verdict::BenignNevus);
    let slide = open_slide(generate_slide(&spec, dir.path()).unwrap().slide_dir).unwrap();
    assert!(matches!(
        extract_patch(&slide, &record(512, 0, 0, 64)),
        Err(Error::OutOfBounds(_))
    ));
    let res = extract_patches(&slide, &[record(0, 0, 0, 64), record(0, 600, 1, 64)], |_, _| Ok(()));
    assert!(matches!(res, Err(Error::OutOfBounds(_))));
    assert!(matches!(
        extract_patch(&slide, &record(0, 0, 5, 64)),
        Err(Error::InvalidLevel { .. })
    ));
}
