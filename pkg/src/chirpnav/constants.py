"""Physical constants and the default radio/vehicle parameters."""

SPEED_OF_LIGHT = 299792458.0  # m/s

GRAVITY = 9.81  # m/s^2, world +z is up, accelerometers read specific force

# Radio band plan: a 13-hop ladder of LoRa channels around 900 MHz.
BAND_CENTER_HZ = 900.0e6
CHANNEL_SPACING_HZ = 2.16e6
NUM_CHANNELS = 13

# Backscatter tags answer on fixed sub-carrier shifts, one per tag,
# spaced 1 MHz apart so the decoded tones never share an FFT bin.
TAG_SHIFTS_HZ = (1.0e6, 2.0e6, 3.0e6, 4.0e6)

# Landing-gear geometry: four tags on a ring of this diameter, mounted as
# two diametrically opposed pairs with orthogonal baselines.
GEAR_DIAMETER_M = 0.66

# Receive array: three antennas on a uniform line.
ARRAY_SPACING_M = 0.16
ARRAY_SIZE = 3


def channel_center_hz(channel: int) -> float:
    """Center frequency of hop ``channel`` (0..NUM_CHANNELS-1)."""
    if not 0 <= channel < NUM_CHANNELS:
        raise ValueError(f"channel index {channel} outside 0..{NUM_CHANNELS - 1}")
    return BAND_CENTER_HZ + (channel - (NUM_CHANNELS - 1) / 2) * CHANNEL_SPACING_HZ
