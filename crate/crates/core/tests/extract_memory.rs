//! Heap profile of streaming extraction, measured with a counting allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use melanoscope_core::decision::Verdict;
use melanoscope_core::label::TissueLabel;
use melanoscope_core::open_slide;
use melanoscope_core::synthgen::{generate_slide, Blob, SynthSpec};
use melanoscope_core::tiling::{
    extract_patches, plan_patches, rasterize_annotations, segment_level, ForegroundParams, PlanParams,
};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

const SIDE: u32 = 4096;
const PATCH: u32 = 256;

#[test]
fn extraction_holds_at_most_one_patch_band() {
    let dir = tempfile::tempdir().unwrap();
    // A wide malignant blob makes the densest band nearly full.
    let mut spec = SynthSpec::random("mem", SIDE, SIDE, 1, 11, Verdict::Melanoma);
    spec.blobs = vec![
        Blob {
            label: TissueLabel::Malignant,
            center: [2048.0, 2048.0],
            radius: 1900.0,
            jitter_sigma: 1.5,
        },
        Blob {
            label: TissueLabel::Benign,
            center: [400.0, 400.0],
            radius: 140.0,
            jitter_sigma: 1.5,
        },
    ];
    let out = generate_slide(&spec, dir.path()).unwrap();
    let slide = open_slide(&out.slide_dir).unwrap();
    let fg = segment_level(&slide, 0, &ForegroundParams::default()).unwrap();
    let labels = rasterize_annotations(&spec.annotations(), &slide, 0, SIDE, SIDE).unwrap();
    let params = PlanParams {
        patch_size: PATCH,
        ..PlanParams::default()
    };
    let records = plan_patches(&slide, &fg, &labels, &params).unwrap();
    assert!(records.len() > 100, "only {} patches planned", records.len());
    drop((fg, labels));

    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let mut seen = 0usize;
    let stats = extract_patches(&slide, &records, |_, tile| {
        seen += tile.pixel_count();
        Ok(())
    })
    .unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - baseline;

    let band = SIDE as usize * PATCH as usize * 3;
    let slide_bytes = SIDE as usize * SIDE as usize * 3;
    println!(
        "{} patches, peak heap growth {peak} bytes, tile buffer peak {} bytes, band {band} bytes, full slide {slide_bytes} bytes",
        stats.patches, stats.peak_buffered_bytes
    );
    assert_eq!(stats.patches, records.len());
    assert_eq!(seen, records.len() * (PATCH * PATCH) as usize);
    assert!(stats.peak_buffered_bytes <= band);
    assert!(peak < band, "peak {peak} exceeds one patch band ({band})");
}
