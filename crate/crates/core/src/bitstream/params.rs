//! Sequence/picture parameter sets and slice headers for the Baseline and
//! Main profiles. Parsing stops right after the deblocking syntax of the
//! slice header; macroblock data is never touched.

use std::collections::HashMap;

use super::bits::BitReader;
use super::nal::{NalUnit, NAL_PPS, NAL_SPS};
use crate::error::{Error, Result};

pub const PROFILE_BASELINE: u8 = 66;
pub const PROFILE_MAIN: u8 = 77;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sps {
    pub profile_idc: u8,
    pub level_idc: u8,
    pub id: u32,
    pub log2_max_frame_num: u32,
    pub pic_order_cnt_type: u32,
    pub log2_max_poc_lsb: u32,
    pub delta_pic_order_always_zero: bool,
    pub frame_mbs_only: bool,
    pub width_mbs: u32,
    pub height_map_units: u32,
}

impl Sps {
    pub fn parse(rbsp: &[u8]) -> Result<Sps> {
        let mut r = BitReader::new(rbsp);
        let profile_idc = r.read_bits(8)? as u8;
        if profile_idc != PROFILE_BASELINE && profile_idc != PROFILE_MAIN {
            return Err(Error::UnsupportedProfile(format!("profile_idc {profile_idc}")));
        }
        let _constraint_flags = r.read_bits(8)?;
        let level_idc = r.read_bits(8)? as u8;
        let id = r.read_ue()?;
        if id > 31 {
            return Err(Error::range("seq_parameter_set_id", id));
        }
        let log2_max_frame_num = r.read_ue()? + 4;
        if log2_max_frame_num > 16 {
            return Err(Error::range("log2_max_frame_num", log2_max_frame_num));
        }
        let pic_order_cnt_type = r.read_ue()?;
        let mut log2_max_poc_lsb = 0;
        let mut delta_pic_order_always_zero = false;
        match pic_order_cnt_type {
            0 => {
                log2_max_poc_lsb = r.read_ue()? + 4;
                if log2_max_poc_lsb > 16 {
                    return Err(Error::range("log2_max_pic_order_cnt_lsb", log2_max_poc_lsb));
                }
            }
            1 => {
                delta_pic_order_always_zero = r.read_flag()?;
                let _offset_for_non_ref_pic = r.read_se()?;
                let _offset_for_top_to_bottom_field = r.read_se()?;
                let cycle = r.read_ue()?;
                if cycle > 255 {
                    return Err(Error::range("num_ref_frames_in_pic_order_cnt_cycle", cycle));
                }
                for _ in 0..cycle {
                    r.read_se()?;
                }
            }
            2 => {}
            other => return Err(Error::range("pic_order_cnt_type", other)),
        }
        let _max_num_ref_frames = r.read_ue()?;
        let _gaps_allowed = r.read_flag()?;
        let width_mbs = r.read_ue()? + 1;
        let height_map_units = r.read_ue()? + 1;
        let frame_mbs_only = r.read_flag()?;
        // remaining fields (mbaff, direct_8x8, cropping, VUI) are not needed
        Ok(Sps {
            profile_idc,
            level_idc,
            id,
            log2_max_frame_num,
            pic_order_cnt_type,
            log2_max_poc_lsb,
            delta_pic_order_always_zero,
            frame_mbs_only,
            width_mbs,
            height_map_units,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pps {
    pub id: u32,
    pub sps_id: u32,
    pub entropy_coding_mode: bool,
    pub bottom_field_pic_order_in_frame_present: bool,
    pub num_ref_idx_l0_default: u32,
    pub num_ref_idx_l1_default: u32,
    pub weighted_pred: bool,
    pub weighted_bipred_idc: u32,
    pub pic_init_qp_minus26: i32,
    pub deblocking_filter_control_present: bool,
    pub redundant_pic_cnt_present: bool,
}

impl Pps {
    pub fn parse(rbsp: &[u8]) -> Result<Pps> {
        let mut r = BitReader::new(rbsp);
        let id = r.read_ue()?;
        if id > 255 {
            return Err(Error::range("pic_parameter_set_id", id));
        }
        let sps_id = r.read_ue()?;
        let entropy_coding_mode = r.read_flag()?;
        let bottom_field_pic_order_in_frame_present = r.read_flag()?;
        let num_slice_groups = r.read_ue()? + 1;
        if num_slice_groups > 1 {
            return Err(Error::UnsupportedProfile("slice groups (FMO)".into()));
        }
        let num_ref_idx_l0_default = r.read_ue()? + 1;
        let num_ref_idx_l1_default = r.read_ue()? + 1;
        if num_ref_idx_l0_default > 32 || num_ref_idx_l1_default > 32 {
            return Err(Error::range("num_ref_idx_default_active", num_ref_idx_l0_default));
        }
        let weighted_pred = r.read_flag()?;
        let weighted_bipred_idc = r.read_bits(2)?;
        let pic_init_qp_minus26 = r.read_se()?;
        if !(-26..=25).contains(&pic_init_qp_minus26) {
            return Err(Error::range("pic_init_qp_minus26", pic_init_qp_minus26));
        }
        let _pic_init_qs_minus26 = r.read_se()?;
        let _chroma_qp_index_offset = r.read_se()?;
        let deblocking_filter_control_present = r.read_flag()?;
        let _constrained_intra_pred = r.read_flag()?;
        let redundant_pic_cnt_present = r.read_flag()?;
        if !r.at_rbsp_trailing() {
            return Err(Error::UnsupportedProfile(
                "PPS range extensions (High profile syntax)".into(),
            ));
        }
        Ok(Pps {
            id,
            sps_id,
            entropy_coding_mode,
            bottom_field_pic_order_in_frame_present,
            num_ref_idx_l0_default,
            num_ref_idx_l1_default,
            weighted_pred,
            weighted_bipred_idc,
            pic_init_qp_minus26,
            deblocking_filter_control_present,
            redundant_pic_cnt_present,
        })
    }
}

/// Parameter sets seen so far in a stream.
#[derive(Debug, Default, Clone)]
pub struct ParameterSets {
    sps: HashMap<u32, Sps>,
    pps: HashMap<u32, Pps>,
}

impl ParameterSets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_sps(&mut self, sps: Sps) {
        self.sps.insert(sps.id, sps);
    }

    pub fn insert_pps(&mut self, pps: Pps) {
        self.pps.insert(pps.id, pps);
    }

    pub fn sps(&self, id: u32) -> Result<&Sps> {
        self.sps
            .get(&id)
            .ok_or(Error::MissingParameterSet { kind: "SPS", id })
    }

    pub fn pps(&self, id: u32) -> Result<&Pps> {
        self.pps
            .get(&id)
            .ok_or(Error::MissingParameterSet { kind: "PPS", id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceType {
    I,
    P,
    B,
}

/// Frame-level facts recovered from a slice header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceHeaderInfo {
    /// Ordinal of the picture this slice belongs to within the stream.
    pub frame_index: u32,
    pub slice_type: SliceType,
    /// `pic_init_qp_minus26 + 26 + slice_qp_delta`.
    pub base_qp: u8,
    pub deblocking_disabled: bool,
    pub first_mb_in_slice: u32,
    pub pps_id: u32,
    pub idr: bool,
}

fn skip_ref_pic_list_modification(r: &mut BitReader<'_>) -> Result<()> {
    if r.read_flag()? {
        loop {
            let idc = r.read_ue()?;
            match idc {
                0..=2 => {
                    r.read_ue()?;
                }
                3 => break,
                other => return Err(Error::range("modification_of_pic_nums_idc", other)),
            }
        }
    }
    Ok(())
}

fn skip_pred_weight_table(r: &mut BitReader<'_>, l0: u32, l1: Option<u32>) -> Result<()> {
    let _luma_log2_weight_denom = r.read_ue()?;
    // Baseline/Main streams are 4:2:0, so chroma weights are present
    let _chroma_log2_weight_denom = r.read_ue()?;
    for count in std::iter::once(l0).chain(l1) {
        for _ in 0..count {
            if r.read_flag()? {
                r.read_se()?;
                r.read_se()?;
            }
            if r.read_flag()? {
                for _ in 0..4 {
                    r.read_se()?;
                }
            }
        }
    }
    Ok(())
}

fn skip_dec_ref_pic_marking(r: &mut BitReader<'_>, idr: bool) -> Result<()> {
    if idr {
        r.read_flag()?;
        r.read_flag()?;
    } else if r.read_flag()? {
        loop {
            let op = r.read_ue()?;
            match op {
                0 => break,
                1 | 3 => {
                    r.read_ue()?;
                    if op == 3 {
                        r.read_ue()?;
                    }
                }
                2 | 6 => {
                    r.read_ue()?;
                }
                4 => {
                    r.read_ue()?;
                }
                5 => {}
                other => return Err(Error::range("memory_management_control_operation", other)),
            }
        }
    }
    Ok(())
}

/// Parses a slice header up to and including the deblocking filter syntax.
/// `frame_index` is supplied by the caller, which tracks picture boundaries.
pub fn parse_slice_header(
    nal: &NalUnit,
    params: &ParameterSets,
    frame_index: u32,
) -> Result<SliceHeaderInfo> {
    if !nal.is_slice() {
        return Err(Error::UnsupportedProfile(format!(
            "NAL unit type {} is not a coded slice",
            nal.nal_unit_type
        )));
    }
    let idr = nal.is_idr();
    let mut r = BitReader::new(&nal.payload);
    let first_mb_in_slice = r.read_ue()?;
    let raw_type = r.read_ue()?;
    if raw_type > 9 {
        return Err(Error::range("slice_type", raw_type));
    }
    let slice_type = match raw_type % 5 {
        0 => SliceType::P,
        1 => SliceType::B,
        2 => SliceType::I,
        _ => return Err(Error::UnsupportedProfile("SP/SI slices".into())),
    };
    let pps_id = r.read_ue()?;
    let pps = params.pps(pps_id)?;
    let sps = params.sps(pps.sps_id)?;

    let _frame_num = r.read_bits(sps.log2_max_frame_num)?;
    let mut field_pic = false;
    if !sps.frame_mbs_only {
        field_pic = r.read_flag()?;
        if field_pic {
            let _bottom_field = r.read_flag()?;
        }
    }
    if idr {
        let _idr_pic_id = r.read_ue()?;
    }
    if sps.pic_order_cnt_type == 0 {
        let _poc_lsb = r.read_bits(sps.log2_max_poc_lsb)?;
        if pps.bottom_field_pic_order_in_frame_present && !field_pic {
            r.read_se()?;
        }
    }
    if sps.pic_order_cnt_type == 1 && !sps.delta_pic_order_always_zero {
        r.read_se()?;
        if pps.bottom_field_pic_order_in_frame_present && !field_pic {
            r.read_se()?;
        }
    }
    if pps.redundant_pic_cnt_present {
        r.read_ue()?;
    }
    if slice_type == SliceType::B {
        let _direct_spatial_mv_pred = r.read_flag()?;
    }
    let mut l0 = pps.num_ref_idx_l0_default;
    let mut l1 = pps.num_ref_idx_l1_default;
    if slice_type != SliceType::I && r.read_flag()? {
        l0 = r.read_ue()? + 1;
        if slice_type == SliceType::B {
            l1 = r.read_ue()? + 1;
        }
        if l0 > 32 || l1 > 32 {
            return Err(Error::range("num_ref_idx_active", l0.max(l1)));
        }
    }
    if slice_type != SliceType::I {
        skip_ref_pic_list_modification(&mut r)?;
        if slice_type == SliceType::B {
            skip_ref_pic_list_modification(&mut r)?;
        }
    }
    let weighted = (pps.weighted_pred && slice_type == SliceType::P)
        || (pps.weighted_bipred_idc == 1 && slice_type == SliceType::B);
    if weighted {
        let l1 = (slice_type == SliceType::B).then_some(l1);
        skip_pred_weight_table(&mut r, l0, l1)?;
    }
    if nal.nal_ref_idc != 0 {
        skip_dec_ref_pic_marking(&mut r, idr)?;
    }
    if pps.entropy_coding_mode && slice_type != SliceType::I {
        let cabac_init_idc = r.read_ue()?;
        if cabac_init_idc > 2 {
            return Err(Error::range("cabac_init_idc", cabac_init_idc));
        }
    }
    let slice_qp_delta = r.read_se()?;
    let qp = 26 + pps.pic_init_qp_minus26 as i64 + slice_qp_delta as i64;
    if !(0..=51).contains(&qp) {
        return Err(Error::range("slice QP", qp));
    }
    let mut deblocking_disabled = false;
    if pps.deblocking_filter_control_present {
        let idc = r.read_ue()?;
        if idc > 2 {
            return Err(Error::range("disable_deblocking_filter_idc", idc));
        }
        deblocking_disabled = idc == 1;
        if idc != 1 {
            r.read_se()?;
            r.read_se()?;
        }
    }
    Ok(SliceHeaderInfo {
        frame_index,
        slice_type,
        base_qp: qp as u8,
        deblocking_disabled,
        first_mb_in_slice,
        pps_id,
        idr,
    })
}

/// Walks a stream's NAL units, collecting parameter sets and returning the
/// header info of every slice in order.
pub fn parse_slices(units: &[NalUnit]) -> Result<Vec<SliceHeaderInfo>> {
    let mut params = ParameterSets::new();
    let mut out = Vec::new();
    let mut frame: Option<u32> = None;
    for unit in units {
        match unit.nal_unit_type {
            NAL_SPS => params.insert_sps(Sps::parse(&unit.payload)?),
            NAL_PPS => params.insert_pps(Pps::parse(&unit.payload)?),
            _ if unit.is_slice() => {
                // peek first_mb_in_slice to detect a new picture
                let first_mb = BitReader::new(&unit.payload).read_ue()?;
                let index = match frame {
                    Some(f) if first_mb != 0 => f,
                    Some(f) => f + 1,
                    None => 0,
                };
                frame = Some(index);
                out.push(parse_slice_header(unit, &params, index)?);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Number of distinct pictures referenced by a slice list.
pub fn picture_count(slices: &[SliceHeaderInfo]) -> usize {
    slices.last().map_or(0, |s| s.frame_index as usize + 1)
}
