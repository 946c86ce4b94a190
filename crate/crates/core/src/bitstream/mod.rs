//! H.264 Annex-B parsing down to slice-header granularity, plus the block
//! trace and raw video formats that carry per-block truth and pixels.

mod bits;
mod nal;
mod params;
pub mod synth;
mod trace_io;
mod yuv;

pub use bits::{BitReader, BitWriter};
pub use nal::{escape, split_nal_units, unescape, NalUnit, NAL_PPS, NAL_SLICE_IDR, NAL_SLICE_NON_IDR, NAL_SPS};
pub use params::{
    parse_slice_header, parse_slices, picture_count, ParameterSets, Pps, SliceHeaderInfo,
    SliceType, Sps, PROFILE_BASELINE, PROFILE_MAIN,
};
pub use trace_io::{
    cross_check, load_trace, parse_trace, serialize_trace, write_trace, QpWarning, TraceFile,
    TraceHeader, QP_PLAUSIBILITY_SPAN,
};
pub use yuv::{read_yuv420, write_yuv420, YuvReader};

#[cfg(test)]
mod tests {
    use super::synth::*;
    use super::*;
    use crate::error::Error;

    #[test]
    fn slice_qp_from_fixture() {
        let sps = SynthSps::default();
        let pps = SynthPps::default();
        let slice = SynthSlice {
            slice_qp_delta: 4,
            ..Default::default()
        };
        let stream = assemble(&[sps.to_unit(), pps.to_unit(), slice.to_unit(&sps, &pps)]);
        let units = split_nal_units(&stream).unwrap();
        let slices = parse_slices(&units).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].base_qp, 30);
        assert_eq!(slices[0].slice_type, SliceType::I);
        assert!(slices[0].idr);
    }

    #[test]
    fn missing_pps() {
        let sps = SynthSps::default();
        let pps = SynthPps::default();
        let slice = SynthSlice {
            pps_id: 3,
            ..Default::default()
        };
        let stream = assemble(&[sps.to_unit(), pps.to_unit(), slice.to_unit(&sps, &pps)]);
        let units = split_nal_units(&stream).unwrap();
        assert!(matches!(
            parse_slices(&units),
            Err(Error::MissingParameterSet { kind: "PPS", id: 3 })
        ));
    }

    #[test]
    fn high_profile_rejected() {
        let sps = SynthSps {
            profile_idc: 100,
            ..Default::default()
        };
        let units = split_nal_units(&assemble(&[sps.to_unit()])).unwrap();
        assert!(matches!(parse_slices(&units), Err(Error::UnsupportedProfile(_))));
    }

    #[test]
    fn deblocking_and_p_slices() {
        let sps = SynthSps {
            profile_idc: 77,
            pic_order_cnt_type: 2,
            ..Default::default()
        };
        let pps = SynthPps {
            entropy_coding_mode: true,
            weighted_pred: true,
            pic_init_qp_minus26: -4,
            ..Default::default()
        };
        let i = SynthSlice::default();
        let p = SynthSlice {
            slice_type: SliceType::P,
            idr: false,
            frame_num: 1,
            slice_qp_delta: -3,
            disable_deblocking_filter_idc: 1,
            num_ref_idx_override: Some(2),
            ref_list_modifications: vec![(0, 0)],
            ..Default::default()
        };
        let stream = assemble(&[
            sps.to_unit(),
            pps.to_unit(),
            i.to_unit(&sps, &pps),
            p.to_unit(&sps, &pps),
        ]);
        let slices = parse_slices(&split_nal_units(&stream).unwrap()).unwrap();
        assert_eq!(slices[1].frame_index, 1);
        assert_eq!(slices[1].slice_type, SliceType::P);
        assert_eq!(slices[1].base_qp, 19);
        assert!(slices[1].deblocking_disabled);
        assert!(!slices[0].deblocking_disabled);
    }
}
