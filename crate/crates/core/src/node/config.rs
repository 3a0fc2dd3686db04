use thiserror::Error;

/// Size of the packed node configuration file.
pub const NODE_CONFIG_FILE_SIZE: usize = 12;

pub const OFFSET_SENSOR_TYPE: usize = 0;
pub const OFFSET_SENSOR_ADDRESS: usize = 1;
pub const OFFSET_SENSOR_ACTION: usize = 3;
pub const OFFSET_SAMPLING_RATE: usize = 4;
pub const OFFSET_RTC_TIME: usize = 8;

/// Sensor action code that requests an immediate measure-and-transmit.
pub const ACTION_MEASURE_NOW: u8 = 0xAA;
pub const ACTION_NONE: u8 = 0x00;

/// Parsed view of the node configuration file.
///
/// Packed little-endian layout: `sensor_type` (u8) at 0, `sensor_address`
/// (u16) at 1, `sensor_action` (u8) at 3, `sampling_rate` seconds (u32) at 4,
/// `rtc_time` Unix seconds (u32) at 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeConfig {
    pub sensor_type: u8,
    pub sensor_address: u16,
    pub sensor_action: u8,
    pub sampling_rate: u32,
    pub rtc_time: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("node config must be {NODE_CONFIG_FILE_SIZE} bytes, got {0}")]
pub struct WrongLength(pub usize);

impl NodeConfig {
    pub fn parse(bytes: &[u8]) -> Result<NodeConfig, WrongLength> {
        let b: &[u8; NODE_CONFIG_FILE_SIZE] =
            bytes.try_into().map_err(|_| WrongLength(bytes.len()))?;
        Ok(NodeConfig {
            sensor_type: b[OFFSET_SENSOR_TYPE],
            sensor_address: u16::from_le_bytes([b[1], b[2]]),
            sensor_action: b[OFFSET_SENSOR_ACTION],
            sampling_rate: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
            rtc_time: u32::from_le_bytes([b[8], b[9], b[10], b[11]]),
        })
    }

    pub fn to_bytes(&self) -> [u8; NODE_CONFIG_FILE_SIZE] {
        let mut b = [0u8; NODE_CONFIG_FILE_SIZE];
        b[OFFSET_SENSOR_TYPE] = self.sensor_type;
        b[1..3].copy_from_slice(&self.sensor_address.to_le_bytes());
        b[OFFSET_SENSOR_ACTION] = self.sensor_action;
        b[4..8].copy_from_slice(&self.sampling_rate.to_le_bytes());
        b[8..12].copy_from_slice(&self.rtc_time.to_le_bytes());
        b
    }
}

/// Whether the byte range `[offset, offset + len)` covers byte `at`.
pub(crate) fn covers(offset: u32, len: usize, at: usize) -> bool {
    let start = offset as usize;
    at >= start && at < start + len
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_sixty_second_soil_config() {
        let bytes = hex::decode("01000000 3C000000 00000000".replace(' ', "")).unwrap();
        let cfg = NodeConfig::parse(&bytes).unwrap();
        assert_eq!(
            cfg,
            NodeConfig {
                sensor_type: 1,
                sensor_address: 0,
                sensor_action: 0,
                sampling_rate: 60,
                rtc_time: 0
            }
        );
    }

    #[test]
    fn parse_zeroes() {
        assert_eq!(NodeConfig::parse(&[0; 12]).unwrap(), NodeConfig::default());
    }

    #[test]
    fn parse_short() {
        assert_eq!(NodeConfig::parse(&[0; 11]), Err(WrongLength(11)));
    }

    #[test]
    fn field_offsets() {
        let cfg = NodeConfig {
            sensor_type: 0x03,
            sensor_address: 0xBEEF,
            sensor_action: 0xAA,
            sampling_rate: 300,
            rtc_time: 1_700_000_000,
        };
        let b = cfg.to_bytes();
        assert_eq!(b[0], 0x03);
        assert_eq!(&b[1..3], &[0xEF, 0xBE]);
        assert_eq!(b[3], 0xAA);
        assert_eq!(&b[4..8], &300u32.to_le_bytes());
        assert_eq!(&b[8..12], &1_700_000_000u32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(b in proptest::array::uniform12(any::<u8>())) {
            prop_assert_eq!(NodeConfig::parse(&b).unwrap().to_bytes(), b);
        }

        #[test]
        fn single_field_write_changes_only_that_field(
            base in proptest::array::uniform12(any::<u8>()),
            field in 0usize..5,
            value in any::<u32>(),
        ) {
            let (offset, width) = [(0, 1), (1, 2), (3, 1), (4, 4), (8, 4)][field];
            let mut bytes = base;
            bytes[offset..offset + width].copy_from_slice(&value.to_le_bytes()[..width]);
            let before = NodeConfig::parse(&base).unwrap();
            let after = NodeConfig::parse(&bytes).unwrap();
            let same = |f: usize| match f {
                0 => before.sensor_type == after.sensor_type,
                1 => before.sensor_address == after.sensor_address,
                2 => before.sensor_action == after.sensor_action,
                3 => before.sampling_rate == after.sampling_rate,
                _ => before.rtc_time == after.rtc_time,
            };
            for other in (0..5).filter(|&f| f != field) {
                prop_assert!(same(other));
            }
        }
    }
}
