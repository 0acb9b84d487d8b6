from dotenv import load_dotenv, find_dotenv

from config.env_vars import env_flag, env_var

load_dotenv(find_dotenv())


class Config:
    LOG_LEVEL = env_var('TSTNN_LOG_LEVEL', 'INFO', str.upper,
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'))
    PRECISION = env_var('TSTNN_PRECISION', 'float32', str.lower, choices=('float32', 'float64'))
    LOG_EVERY = env_var('TSTNN_LOG_EVERY', 10, int)
    SLOW_TESTS = env_var('TSTNN_SLOW_TESTS', False, env_flag)
