import datetime
import platform
import time
from datetime import timedelta

import cpuinfo
import psutil


def host_info() -> dict:
    """Describe the machine a benchmark ran on."""
    sec = timedelta(seconds=int(time.monotonic()))
    d = datetime.datetime(1, 1, 1) + sec

    sysinfo = cpuinfo.get_cpu_info()
    memory = psutil.virtual_memory()

    return {
        "python_version": sysinfo.get("python_version", platform.python_version()),
        "system_uptime": f"{(d.day - 1):02d}:{d.hour:02d}:{d.minute:02d}:{d.second:02d}",
        "os": f"{platform.system()} {platform.release()}",
        "cpu": sysinfo.get("brand_raw", platform.processor()),
        "cpu_count": psutil.cpu_count(logical=True),
        "cpu_percent": psutil.cpu_percent(),
        "ram_percent": memory.percent,
        "ram_used_mb": round(memory.used / 1000000, 2),
        "ram_total_mb": round(memory.total / 1000000, 2),
    }
