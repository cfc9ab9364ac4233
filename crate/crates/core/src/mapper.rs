//! Placement of mixed-precision weight blocks onto crossbars as OU-sized
//! tiles, OU utilization and the bitwidth LUT size.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quant::WbGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossbarSpec {
    pub xbar_rows: usize,
    pub xbar_cols: usize,
    pub ou_height: usize,
    pub ou_width: usize,
    pub bits_per_cell: u32,
}

impl Default for CrossbarSpec {
    fn default() -> Self {
        Self {
            xbar_rows: 128,
            xbar_cols: 128,
            ou_height: 9,
            ou_width: 8,
            bits_per_cell: 1,
        }
    }
}

impl CrossbarSpec {
    pub fn with_ou(self, ou_height: usize, ou_width: usize) -> Self {
        Self {
            ou_height,
            ou_width,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ou_height == 0 || self.ou_width == 0 {
            return Err(Error::Config("OU dimensions must be positive".into()));
        }
        if self.ou_height > self.xbar_rows || self.ou_width > self.xbar_cols {
            return Err(Error::Config(format!(
                "OU {}x{} does not fit a {}x{} crossbar",
                self.ou_height, self.ou_width, self.xbar_rows, self.xbar_cols
            )));
        }
        if self.bits_per_cell != 1 {
            return Err(Error::Config("only 1-bit cells are supported".into()));
        }
        Ok(())
    }

    /// OU rows per crossbar.
    pub fn bands(&self) -> usize {
        self.xbar_rows / self.ou_height
    }

    /// OU columns per crossbar.
    pub fn slots(&self) -> usize {
        self.xbar_cols / self.ou_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// One bit plane of one block per OU, planes MSB-first.
    Aware,
    /// Bits of each weight in adjacent columns, ignoring OU boundaries.
    Consecutive,
    /// Like `Consecutive`, but a weight's bits never cross an OU boundary.
    SameOu,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aware" => Ok(Scheme::Aware),
            "consecutive" => Ok(Scheme::Consecutive),
            "same-ou" => Ok(Scheme::SameOu),
            other => Err(Error::Config(format!("unknown mapping scheme '{other}'"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Aware => "aware",
            Scheme::Consecutive => "consecutive",
            Scheme::SameOu => "same-ou",
        })
    }
}

/// One physical column of a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ColumnCell {
    pub wb: [usize; 2],
    /// Column of the weight inside its block.
    pub vector: usize,
    pub bit: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OuEntry {
    Spare,
    /// Bit plane `bit` of block `wb = [vertical, horizontal]`.
    Plane {
        wb: [usize; 2],
        bit: u32,
    },
    /// Column-granular contents; `None` columns hold no data.
    Columns(Vec<Option<ColumnCell>>),
}

impl OuEntry {
    pub fn is_spare(&self) -> bool {
        matches!(self, OuEntry::Spare)
    }
}

impl Serialize for OuEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OuEntry::Spare => s.serialize_str("spare"),
            OuEntry::Plane { wb, bit } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("wb", wb)?;
                m.serialize_entry("bit", bit)?;
                m.end()
            }
            OuEntry::Columns(cols) => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("columns", cols)?;
                m.end()
            }
        }
    }
}

/// An OU position: crossbar index, OU row (band) and OU column (slot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct OuLoc {
    pub crossbar: usize,
    pub band: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crossbar {
    pub layer: usize,
    pub bands: usize,
    pub slots: usize,
    /// Band-major OU table.
    pub ous: Vec<OuEntry>,
}

impl Crossbar {
    fn new(layer: usize, spec: &CrossbarSpec) -> Self {
        Self {
            layer,
            bands: spec.bands(),
            slots: spec.slots(),
            ous: vec![OuEntry::Spare; spec.bands() * spec.slots()],
        }
    }

    pub fn ou(&self, band: usize, slot: usize) -> &OuEntry {
        &self.ous[band * self.slots + slot]
    }

    pub fn active_ous(&self) -> usize {
        self.ous.iter().filter(|o| !o.is_spare()).count()
    }
}

impl Serialize for Crossbar {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[OuEntry]> = self.ous.chunks(self.slots).collect();
        let mut st = s.serialize_struct("Crossbar", 2)?;
        st.serialize_field("layer", &self.layer)?;
        st.serialize_field("ous", &rows)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossbarLayout {
    pub scheme: Scheme,
    pub spec: CrossbarSpec,
    pub crossbars: Vec<Crossbar>,
    /// `[layer][block]` → OUs the block occupies, in placement order (MSB
    /// plane first under [`Scheme::Aware`]).
    #[serde(skip)]
    pub blocks: Vec<Vec<Vec<OuLoc>>>,
    /// Weight vectors whose bits cross an OU boundary.
    pub straddles: usize,
}

impl CrossbarLayout {
    pub fn entry(&self, loc: OuLoc) -> &OuEntry {
        self.crossbars[loc.crossbar].ou(loc.band, loc.slot)
    }

    pub fn active_ous(&self) -> usize {
        self.crossbars.iter().map(Crossbar::active_ous).sum()
    }

    pub fn layer_active_ous(&self, layer: usize) -> usize {
        self.crossbars
            .iter()
            .filter(|x| x.layer == layer)
            .map(Crossbar::active_ous)
            .sum()
    }

    pub fn layer_crossbars(&self, layer: usize) -> usize {
        self.crossbars.iter().filter(|x| x.layer == layer).count()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            #[serde(flatten)]
            layout: &'a CrossbarLayout,
            utilization: f64,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            layout: self,
            utilization: utilization(self),
        })?)
    }
}

/// Hands out crossbars for one layer, keyed by (band group, slot chunk).
struct Allocator<'a> {
    spec: &'a CrossbarSpec,
    layer: usize,
    crossbars: &'a mut Vec<Crossbar>,
    ids: HashMap<(usize, usize), usize>,
}

impl Allocator<'_> {
    /// Location of OU column `slot` in block row `vi`.
    fn locate(&mut self, vi: usize, slot: usize) -> OuLoc {
        let (bands, slots) = (self.spec.bands(), self.spec.slots());
        let key = (vi / bands, slot / slots);
        let next = self.crossbars.len();
        let id = *self.ids.entry(key).or_insert(next);
        if id == next {
            self.crossbars.push(Crossbar::new(self.layer, self.spec));
        }
        OuLoc {
            crossbar: id,
            band: vi % bands,
            slot: slot % slots,
        }
    }

    fn entry_mut(&mut self, loc: OuLoc) -> &mut OuEntry {
        let x = &mut self.crossbars[loc.crossbar];
        &mut x.ous[loc.band * x.slots + loc.slot]
    }
}

fn check_grids(grids: &[&WbGrid], spec: &CrossbarSpec) -> Result<()> {
    spec.validate()?;
    for (li, g) in grids.iter().enumerate() {
        if g.ou_height() != spec.ou_height || g.ou_width() != spec.ou_width {
            return Err(Error::LayoutMismatch(format!(
                "layer {li} is partitioned into {}x{} blocks but the OU is {}x{}",
                g.ou_height(),
                g.ou_width(),
                spec.ou_height,
                spec.ou_width
            )));
        }
    }
    Ok(())
}

pub fn layout(scheme: Scheme, grids: &[&WbGrid], spec: &CrossbarSpec) -> Result<CrossbarLayout> {
    match scheme {
        Scheme::Aware => layout_precision_aware(grids, spec),
        Scheme::Consecutive => layout_consecutive(grids, spec),
        Scheme::SameOu => layout_same_ou(grids, spec),
    }
}

/// Each retained bit plane of each block gets a whole OU; a block row's
/// planes fill OU columns left to right, MSB first, and spill into a new
/// crossbar past the last column.
pub fn layout_precision_aware(grids: &[&WbGrid], spec: &CrossbarSpec) -> Result<CrossbarLayout> {
    check_grids(grids, spec)?;
    let mut crossbars = Vec::new();
    let mut blocks = Vec::with_capacity(grids.len());
    for (layer, grid) in grids.iter().enumerate() {
        let mut alloc = Allocator {
            spec,
            layer,
            crossbars: &mut crossbars,
            ids: HashMap::new(),
        };
        let mut placed = vec![Vec::new(); grid.num_blocks()];
        for vi in 0..grid.num_vblock() {
            let mut col = 0;
            for hj in 0..grid.num_hblock() {
                let g = grid.block_id(vi, hj);
                let bw = grid.bitwidth(g);
                for bit in (0..bw).rev() {
                    let loc = alloc.locate(vi, col);
                    *alloc.entry_mut(loc) = OuEntry::Plane { wb: [vi, hj], bit };
                    placed[g].push(loc);
                    col += 1;
                }
            }
        }
        blocks.push(placed);
    }
    Ok(CrossbarLayout {
        scheme: Scheme::Aware,
        spec: *spec,
        crossbars,
        blocks,
        straddles: 0,
    })
}

/// Column-granular placement shared by the two weight-contiguous schemes.
fn layout_columns(grids: &[&WbGrid], spec: &CrossbarSpec, same_ou: bool) -> Result<CrossbarLayout> {
    check_grids(grids, spec)?;
    let w = spec.ou_width;
    let mut crossbars = Vec::new();
    let mut blocks = Vec::with_capacity(grids.len());
    let mut straddles = 0;
    for (layer, grid) in grids.iter().enumerate() {
        if same_ou {
            if let Some(g) = (0..grid.num_blocks()).find(|&g| grid.bitwidth(g) as usize > w) {
                return Err(Error::Mapping(format!(
                    "layer {layer} block {g} has {} bits, wider than the {w}-column OU",
                    grid.bitwidth(g)
                )));
            }
        }
        let mut alloc = Allocator {
            spec,
            layer,
            crossbars: &mut crossbars,
            ids: HashMap::new(),
        };
        let mut placed = vec![Vec::new(); grid.num_blocks()];
        for vi in 0..grid.num_vblock() {
            let mut pc = 0usize;
            for hj in 0..grid.num_hblock() {
                let g = grid.block_id(vi, hj);
                let bw = grid.bitwidth(g) as usize;
                if bw == 0 {
                    continue;
                }
                // Blocks start on a fresh OU.
                pc = pc.div_ceil(w) * w;
                for vector in 0..w {
                    if same_ou && pc % w + bw > w {
                        pc = pc.div_ceil(w) * w;
                    }
                    if pc / w != (pc + bw - 1) / w {
                        straddles += 1;
                    }
                    for k in 0..bw {
                        let bit = (bw - 1 - k) as u32;
                        let loc = alloc.locate(vi, pc / w);
                        let entry = alloc.entry_mut(loc);
                        if entry.is_spare() {
                            *entry = OuEntry::Columns(vec![None; w]);
                        }
                        if let OuEntry::Columns(cols) = entry {
                            cols[pc % w] = Some(ColumnCell {
                                wb: [vi, hj],
                                vector,
                                bit,
                            });
                        }
                        if placed[g].last() != Some(&loc) {
                            placed[g].push(loc);
                        }
                        pc += 1;
                    }
                }
            }
        }
        blocks.push(placed);
    }
    Ok(CrossbarLayout {
        scheme: if same_ou {
            Scheme::SameOu
        } else {
            Scheme::Consecutive
        },
        spec: *spec,
        crossbars,
        blocks,
        straddles,
    })
}

/// Bits of each weight in adjacent columns; vectors may straddle OUs.
pub fn layout_consecutive(grids: &[&WbGrid], spec: &CrossbarSpec) -> Result<CrossbarLayout> {
    layout_columns(grids, spec, false)
}

/// Bits of each weight confined to one OU, leaving spare columns where the
/// bitwidth does not divide the OU width.
pub fn layout_same_ou(grids: &[&WbGrid], spec: &CrossbarSpec) -> Result<CrossbarLayout> {
    layout_columns(grids, spec, true)
}

/// Fraction of columns in used OUs that hold bit data. An empty layout
/// counts as fully utilized.
pub fn utilization(layout: &CrossbarLayout) -> f64 {
    utilization_where(layout, |_| true)
}

/// [`utilization`] restricted to the crossbars of one layer.
pub fn layer_utilization(layout: &CrossbarLayout, layer: usize) -> f64 {
    utilization_where(layout, |x| x.layer == layer)
}

fn utilization_where(layout: &CrossbarLayout, keep: impl Fn(&Crossbar) -> bool) -> f64 {
    let w = layout.spec.ou_width;
    let (mut live, mut total) = (0usize, 0usize);
    for entry in layout
        .crossbars
        .iter()
        .filter(|x| keep(x))
        .flat_map(|x| &x.ous)
    {
        match entry {
            OuEntry::Spare => {}
            OuEntry::Plane { .. } => {
                live += w;
                total += w;
            }
            OuEntry::Columns(cols) => {
                live += cols.iter().filter(|c| c.is_some()).count();
                total += w;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        live as f64 / total as f64
    }
}

/// Bits needed to store one bitwidth in `0..=n`.
pub fn lut_entry_bits(n: u32) -> u32 {
    u32::BITS - n.leading_zeros()
}

/// Size of the per-block bitwidth table over all layers, in bytes.
pub fn lut_bytes(grids: &[&WbGrid]) -> u64 {
    let bits: u64 = grids
        .iter()
        .map(|g| g.num_blocks() as u64 * lut_entry_bits(g.n()) as u64)
        .sum();
    bits.div_ceil(8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize, ou: (usize, usize), table: &[Vec<u32>]) -> WbGrid {
        WbGrid::with_table(rows, cols, ou.0, ou.1, 8, table).unwrap()
    }

    fn spec(xr: usize, xc: usize, oh: usize, ow: usize) -> CrossbarSpec {
        CrossbarSpec {
            xbar_rows: xr,
            xbar_cols: xc,
            ou_height: oh,
            ou_width: ow,
            bits_per_cell: 1,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(CrossbarSpec::default().validate().is_ok());
        assert_eq!(CrossbarSpec::default().bands(), 14);
        assert_eq!(CrossbarSpec::default().slots(), 16);
        assert!(spec(8, 8, 9, 8).validate().is_err());
        assert!(spec(128, 128, 0, 8).validate().is_err());
    }

    #[test]
    fn single_block_three_planes() {
        let g = grid(4, 4, (4, 4), &[vec![3]]);
        let l = layout_precision_aware(&[&g], &spec(4, 16, 4, 4)).unwrap();
        assert_eq!(l.crossbars.len(), 1);
        let x = &l.crossbars[0];
        assert_eq!(x.ou(0, 0), &OuEntry::Plane { wb: [0, 0], bit: 2 });
        assert_eq!(x.ou(0, 1), &OuEntry::Plane { wb: [0, 0], bit: 1 });
        assert_eq!(x.ou(0, 2), &OuEntry::Plane { wb: [0, 0], bit: 0 });
        assert!(x.ou(0, 3).is_spare());
        assert_eq!(utilization(&l), 1.0);
    }

    #[test]
    fn two_stacked_blocks_leave_one_spare() {
        let g = grid(4, 2, (2, 2), &[vec![2], vec![1]]);
        let l = layout_precision_aware(&[&g], &spec(4, 4, 2, 2)).unwrap();
        assert_eq!(l.crossbars.len(), 1);
        assert_eq!(l.active_ous(), 3);
        assert_eq!(
            l.crossbars[0].ous.iter().filter(|o| o.is_spare()).count(),
            1
        );
        assert_eq!(
            l.blocks[0][1],
            vec![OuLoc {
                crossbar: 0,
                band: 1,
                slot: 0
            }]
        );
    }

    #[test]
    fn zero_bit_block_takes_nothing() {
        let g = grid(9, 16, (9, 8), &[vec![0, 2]]);
        let l = layout_precision_aware(&[&g], &CrossbarSpec::default()).unwrap();
        assert!(l.blocks[0][0].is_empty());
        assert_eq!(l.active_ous(), 2);
        // The second block starts at column 0 of its row.
        assert_eq!(l.blocks[0][1][0].slot, 0);
    }

    #[test]
    fn overflow_opens_new_crossbar() {
        // 3 horizontal blocks of 8 bits against 16 OU columns.
        let g = grid(9, 24, (9, 8), &[vec![8, 8, 8]]);
        let l = layout_precision_aware(&[&g], &CrossbarSpec::default()).unwrap();
        assert_eq!(l.crossbars.len(), 2);
        assert_eq!(l.crossbars[0].active_ous(), 16);
        assert_eq!(l.crossbars[1].active_ous(), 8);
    }

    #[test]
    fn tall_layers_wrap_bands() {
        let table = vec![vec![1]; 15];
        let g = grid(135, 8, (9, 8), &table);
        let l = layout_precision_aware(&[&g], &CrossbarSpec::default()).unwrap();
        assert_eq!(l.crossbars.len(), 2);
        assert_eq!(
            l.blocks[0][14],
            vec![OuLoc {
                crossbar: 1,
                band: 0,
                slot: 0
            }]
        );
    }

    #[test]
    fn layers_do_not_share_crossbars() {
        let a = grid(9, 8, (9, 8), &[vec![1]]);
        let b = grid(9, 8, (9, 8), &[vec![1]]);
        let l = layout_precision_aware(&[&a, &b], &CrossbarSpec::default()).unwrap();
        assert_eq!(l.crossbars.len(), 2);
        assert_eq!(l.crossbars[1].layer, 1);
    }

    #[test]
    fn grid_and_spec_must_agree() {
        let g = grid(9, 8, (9, 8), &[vec![1]]);
        let err = layout_precision_aware(&[&g], &spec(128, 128, 16, 16)).unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch(_)));
    }

    #[test]
    fn consecutive_three_bits_straddle() {
        let g = grid(4, 4, (4, 4), &[vec![3]]);
        let l = layout_consecutive(&[&g], &spec(4, 16, 4, 4)).unwrap();
        // Vectors occupy columns 0-2, 3-5, 6-8, 9-11.
        assert_eq!(l.straddles, 2);
        let OuEntry::Columns(first) = l.crossbars[0].ou(0, 0) else {
            panic!("expected columns")
        };
        assert_eq!(
            first[3],
            Some(ColumnCell {
                wb: [0, 0],
                vector: 1,
                bit: 2
            })
        );
        assert_eq!(l.active_ous(), 3);
        assert_eq!(utilization(&l), 1.0);
    }

    #[test]
    fn dividing_bitwidth_never_straddles() {
        let g = grid(4, 8, (4, 4), &[vec![2, 4]]);
        let l = layout_consecutive(&[&g], &spec(4, 64, 4, 4)).unwrap();
        assert_eq!(l.straddles, 0);
    }

    #[test]
    fn same_ou_three_of_four() {
        let g = grid(4, 4, (4, 4), &[vec![3]]);
        let l = layout_same_ou(&[&g], &spec(4, 16, 4, 4)).unwrap();
        assert_eq!(l.straddles, 0);
        assert_eq!(l.active_ous(), 4);
        assert_eq!(utilization(&l), 0.75);
    }

    #[test]
    fn same_ou_rejects_wide_blocks() {
        let g = grid(4, 4, (4, 4), &[vec![5]]);
        assert!(matches!(
            layout_same_ou(&[&g], &spec(4, 16, 4, 4)),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn empty_layout_is_vacuously_full() {
        let g = grid(9, 8, (9, 8), &[vec![0]]);
        let l = layout_precision_aware(&[&g], &CrossbarSpec::default()).unwrap();
        assert_eq!(l.active_ous(), 0);
        assert_eq!(utilization(&l), 1.0);
        let none: [&WbGrid; 0] = [];
        assert_eq!(
            utilization(&layout_same_ou(&none, &CrossbarSpec::default()).unwrap()),
            1.0
        );
    }

    #[test]
    fn lut_arithmetic() {
        assert_eq!(lut_entry_bits(8), 4);
        assert_eq!(lut_entry_bits(1), 1);
        assert_eq!(lut_entry_bits(15), 4);
        assert_eq!(lut_entry_bits(16), 5);
        let one = WbGrid::partition(9, 8, 9, 8, 8);
        assert_eq!(lut_bytes(&[&one]), 1);
        let two = WbGrid::partition(18, 8, 9, 8, 8);
        assert_eq!(lut_bytes(&[&two]), 1);
        let three = WbGrid::partition(27, 8, 9, 8, 8);
        assert_eq!(lut_bytes(&[&three]), 2);
        // Bits are summed across layers before rounding.
        assert_eq!(lut_bytes(&[&one, &one]), 1);
    }

    #[test]
    fn json_dump_shape() {
        let g = grid(4, 2, (2, 2), &[vec![2], vec![1]]);
        let l = layout_precision_aware(&[&g], &spec(4, 4, 2, 2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&l.to_json().unwrap()).unwrap();
        assert_eq!(v["scheme"], "aware");
        assert_eq!(v["utilization"], 1.0);
        assert_eq!(
            v["crossbars"][0]["ous"][0][1],
            serde_json::json!({"wb": [0, 0], "bit": 0})
        );
        assert_eq!(v["crossbars"][0]["ous"][1][1], "spare");
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("same-ou".parse::<Scheme>().unwrap(), Scheme::SameOu);
        assert!("diagonal".parse::<Scheme>().is_err());
        assert_eq!(Scheme::Consecutive.to_string(), "consecutive");
    }
}
