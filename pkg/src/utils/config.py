import configparser

config = None

def init(config_file: str = None):
    global config
    config = configparser.ConfigParser()
    if config_file:
        config.read(config_file)

def get_instance() -> configparser.ConfigParser:
    global config
    # 未初始化时返回空配置，所有读取走 fallback 默认值
    if config is None:
        config = configparser.ConfigParser()
    return config

def get_list(conf: configparser.ConfigParser, section: str, option: str, fallback: list, cast=str) -> list:
    """读取逗号分隔的列表配置项"""
    raw = conf.get(section, option, fallback=None)
    if raw is None or raw.strip() == "":
        return list(fallback)
    return [cast(item.strip()) for item in raw.split(",") if item.strip()]

def get_optional_float(conf: configparser.ConfigParser, section: str, option: str) -> float | None:
    raw = conf.get(section, option, fallback=None)
    if raw is None or raw.strip() == "":
        return None
    return float(raw)


if __name__ == "__main__":
    import os
    config_file = os.path.join(os.path.dirname(__file__), "../../configuration/test_conf.ini")
    init(config_file)
    conf = get_instance()
    for section in conf.sections():
        for option in conf.options(section):
            print(f"{section}.{option}={conf.get(section, option)}")
