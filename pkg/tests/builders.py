"""Small programmatic scenarios for tests."""

from vmksim.scenario import from_dict


def sandbox(name, pcpu, **kw):
    return {"name": name, "pcpu": pcpu, **kw}


def main(name, sb, budget, period, **kw):
    return {"name": name, "sandbox": sb, "budget": budget, "period": period, **kw}


def io(name, sb, util):
    return {"name": name, "sandbox": sb, "class": "io", "util": util}


def thread(name, vcpu, workload, **kw):
    return {"name": name, "vcpu": vcpu, "workload": workload, **kw}


def scenario(duration="100ms", cores=1, sample="10ms", **tables):
    raw = {"name": tables.pop("name", "probe"), "duration": duration,
           "sample_interval": sample,
           "host": {"cores": cores, **tables.pop("host", {})}}
    raw.update(tables)
    return from_dict(raw).validate()
