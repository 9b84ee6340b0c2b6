from dotenv import load_dotenv
import os

load_dotenv()

LOG_LEVEL = os.getenv("SCAWAVE_LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("SCAWAVE_SEED", 42))
CONFIG_PATH = os.getenv("SCAWAVE_CONFIG")
DATA_DIR = os.getenv("SCAWAVE_DATA_DIR", "data")
# Бюджет памяти на матрицы внимания (B, 4, M, M) одного прохода
ATTENTION_MEMORY_MB = int(os.getenv("SCAWAVE_ATTENTION_MB", 512))

# Формат canonical-файлов и чекпоинтов
SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1

# Порядок столбцов AP - общий контракт для pipeline и модели
AP_GROUPS = {
    "ddm": ("ddm_nbrcs", "ddm_les", "ddm_snr"),
    "receiver": ("gps_eirp", "sp_rx_gain"),
    "geometry": ("sp_inc_angle", "sp_lat", "sp_lon", "rcg"),
}
AP_COLUMNS = ("ddm_nbrcs", "ddm_les", "ddm_snr", "gps_eirp", "sp_rx_gain",
              "sp_inc_angle", "sp_lat", "sp_lon", "rcg")
WIND_COLUMN = "wind_speed"
FILL_VALUE = -9999.0
DDM_TYPES = ("brcs", "eff_scatter", "power_analog")
N_CHANNELS = 4
