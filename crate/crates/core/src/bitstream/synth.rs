//! Writes minimal Annex-B streams (SPS, PPS, slice headers with an empty
//! slice body) from explicit syntax values. Used to build parser fixtures.

use super::bits::BitWriter;
use super::nal::{NalUnit, NAL_PPS, NAL_SLICE_IDR, NAL_SLICE_NON_IDR, NAL_SPS};
use super::params::SliceType;

#[derive(Debug, Clone)]
pub struct SynthSps {
    pub profile_idc: u8,
    pub id: u32,
    pub log2_max_frame_num: u32,
    /// 0 or 2.
    pub pic_order_cnt_type: u32,
    pub log2_max_poc_lsb: u32,
    pub width_mbs: u32,
    pub height_mbs: u32,
}

impl Default for SynthSps {
    fn default() -> Self {
        SynthSps {
            profile_idc: 66,
            id: 0,
            log2_max_frame_num: 4,
            pic_order_cnt_type: 0,
            log2_max_poc_lsb: 6,
            width_mbs: 8,
            height_mbs: 8,
        }
    }
}

impl SynthSps {
    pub fn to_unit(&self) -> NalUnit {
        let mut w = BitWriter::new();
        w.write_bits(self.profile_idc as u32, 8);
        w.write_bits(0, 8);
        w.write_bits(30, 8);
        w.write_ue(self.id);
        w.write_ue(self.log2_max_frame_num - 4);
        w.write_ue(self.pic_order_cnt_type);
        if self.pic_order_cnt_type == 0 {
            w.write_ue(self.log2_max_poc_lsb - 4);
        }
        w.write_ue(1); // max_num_ref_frames
        w.write_bit(false); // gaps
        w.write_ue(self.width_mbs - 1);
        w.write_ue(self.height_mbs - 1);
        w.write_bit(true); // frame_mbs_only
        w.write_bit(true); // direct_8x8_inference
        w.write_bit(false); // cropping
        w.write_bit(false); // vui
        w.write_trailing_bits();
        NalUnit::from_payload(3, NAL_SPS, &w.into_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPps {
    pub id: u32,
    pub sps_id: u32,
    pub entropy_coding_mode: bool,
    pub weighted_pred: bool,
    pub pic_init_qp_minus26: i32,
    pub deblocking_filter_control_present: bool,
    pub redundant_pic_cnt_present: bool,
}

impl Default for SynthPps {
    fn default() -> Self {
        SynthPps {
            id: 0,
            sps_id: 0,
            entropy_coding_mode: false,
            weighted_pred: false,
            pic_init_qp_minus26: 0,
            deblocking_filter_control_present: true,
            redundant_pic_cnt_present: false,
        }
    }
}

impl SynthPps {
    pub fn to_unit(&self) -> NalUnit {
        let mut w = BitWriter::new();
        w.write_ue(self.id);
        w.write_ue(self.sps_id);
        w.write_bit(self.entropy_coding_mode);
        w.write_bit(false); // bottom_field_pic_order_in_frame_present
        w.write_ue(0); // num_slice_groups_minus1
        w.write_ue(0); // num_ref_idx_l0_default_active_minus1
        w.write_ue(0); // num_ref_idx_l1_default_active_minus1
        w.write_bit(self.weighted_pred);
        w.write_bits(0, 2); // weighted_bipred_idc
        w.write_se(self.pic_init_qp_minus26);
        w.write_se(0); // pic_init_qs_minus26
        w.write_se(0); // chroma_qp_index_offset
        w.write_bit(self.deblocking_filter_control_present);
        w.write_bit(false); // constrained_intra_pred
        w.write_bit(self.redundant_pic_cnt_present);
        w.write_trailing_bits();
        NalUnit::from_payload(3, NAL_PPS, &w.into_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSlice {
    pub slice_type: SliceType,
    pub idr: bool,
    pub nal_ref_idc: u8,
    pub first_mb: u32,
    pub pps_id: u32,
    pub frame_num: u32,
    pub slice_qp_delta: i32,
    /// Written only when the PPS has deblocking control present.
    pub disable_deblocking_filter_idc: u32,
    /// Some(n) writes num_ref_idx_active_override with n active references.
    pub num_ref_idx_override: Option<u32>,
    /// Long-term/short-term modification ops written for list 0.
    pub ref_list_modifications: Vec<(u32, u32)>,
}

impl Default for SynthSlice {
    fn default() -> Self {
        SynthSlice {
            slice_type: SliceType::I,
            idr: true,
            nal_ref_idc: 3,
            first_mb: 0,
            pps_id: 0,
            frame_num: 0,
            slice_qp_delta: 0,
            disable_deblocking_filter_idc: 0,
            num_ref_idx_override: None,
            ref_list_modifications: Vec::new(),
        }
    }
}

impl SynthSlice {
    pub fn to_unit(&self, sps: &SynthSps, pps: &SynthPps) -> NalUnit {
        let mut w = BitWriter::new();
        w.write_ue(self.first_mb);
        let type_code = match self.slice_type {
            SliceType::P => 0,
            SliceType::B => 1,
            SliceType::I => 2,
        };
        w.write_ue(type_code + 5);
        w.write_ue(self.pps_id);
        w.write_bits(self.frame_num, sps.log2_max_frame_num);
        if self.idr {
            w.write_ue(0); // idr_pic_id
        }
        if sps.pic_order_cnt_type == 0 {
            w.write_bits(0, sps.log2_max_poc_lsb);
        }
        if pps.redundant_pic_cnt_present {
            w.write_ue(0);
        }
        if self.slice_type == SliceType::B {
            w.write_bit(true); // direct_spatial_mv_pred
        }
        let mut l0 = 1;
        if self.slice_type != SliceType::I {
            match self.num_ref_idx_override {
                Some(n) => {
                    w.write_bit(true);
                    w.write_ue(n - 1);
                    if self.slice_type == SliceType::B {
                        w.write_ue(n - 1);
                    }
                    l0 = n;
                }
                None => w.write_bit(false),
            }
            let lists = if self.slice_type == SliceType::B { 2 } else { 1 };
            for _ in 0..lists {
                if self.ref_list_modifications.is_empty() {
                    w.write_bit(false);
                } else {
                    w.write_bit(true);
                    for &(idc, value) in &self.ref_list_modifications {
                        w.write_ue(idc);
                        w.write_ue(value);
                    }
                    w.write_ue(3);
                }
            }
        }
        if pps.weighted_pred && self.slice_type == SliceType::P {
            w.write_ue(5); // luma_log2_weight_denom
            w.write_ue(5); // chroma_log2_weight_denom
            for i in 0..l0 {
                let luma = i % 2 == 0;
                w.write_bit(luma);
                if luma {
                    w.write_se(33);
                    w.write_se(-2);
                }
                w.write_bit(false);
            }
        }
        if self.nal_ref_idc != 0 {
            if self.idr {
                w.write_bit(false);
                w.write_bit(false);
            } else {
                w.write_bit(false); // adaptive_ref_pic_marking_mode
            }
        }
        if pps.entropy_coding_mode && self.slice_type != SliceType::I {
            w.write_ue(1); // cabac_init_idc
        }
        w.write_se(self.slice_qp_delta);
        if pps.deblocking_filter_control_present {
            w.write_ue(self.disable_deblocking_filter_idc);
            if self.disable_deblocking_filter_idc != 1 {
                w.write_se(0);
                w.write_se(0);
            }
        }
        // stand-in for slice data
        w.write_bits(0xA5, 8);
        w.write_trailing_bits();
        let nal_type = if self.idr { NAL_SLICE_IDR } else { NAL_SLICE_NON_IDR };
        NalUnit::from_payload(self.nal_ref_idc, nal_type, &w.into_bytes())
    }
}

/// Concatenates framed units into an Annex-B stream.
pub fn assemble(units: &[NalUnit]) -> Vec<u8> {
    units.iter().flat_map(NalUnit::framed).collect()
}
