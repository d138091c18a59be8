#!/usr/bin/env python3
"""Regenerate include/gridsense/cases/*.hpp from the PYPOWER copies of the
standard MATPOWER IEEE cases (pip install pypower)."""
import pathlib
import sys

from pypower import api

OUT = pathlib.Path(__file__).resolve().parent.parent / "include" / "gridsense" / "cases"


def fmt(v):
    if v == float("inf"):
        return "Inf"
    if v == float("-inf"):
        return "-Inf"
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def matrix(name, rows):
    lines = [f"mpc.{name} = ["]
    for r in rows:
        lines.append("\t" + "\t".join(fmt(x) for x in r) + ";")
    lines.append("];")
    return "\n".join(lines)


def export(case_name):
    mpc = getattr(api, case_name)()
    parts = [
        f"function mpc = {case_name}",
        f"%{case_name.upper()}  Power flow data for the IEEE {case_name[4:]} bus test case.",
        "",
        "%% MATPOWER Case Format : Version 2",
        "mpc.version = '2';",
        "",
        "%%-----  Power Flow Data  -----%%",
        "%% system MVA base",
        f"mpc.baseMVA = {fmt(mpc['baseMVA'])};",
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        matrix("bus", mpc["bus"]),
        "",
        "%% generator data",
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\t...",
        matrix("gen", mpc["gen"]),
        "",
        "%% branch data",
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        matrix("branch", mpc["branch"]),
        "",
    ]
    if "gencost" in mpc:
        parts += ["%%-----  OPF Data  -----%%", "%% generator cost data", matrix("gencost", mpc["gencost"]), ""]
    text = "\n".join(parts)
    header = (
        "#pragma once\n\n"
        "// Generated by scripts/export_cases.py. Do not edit.\n\n"
        "#include <string_view>\n\n"
        "namespace gridsense::cases {\n\n"
        f"inline constexpr std::string_view {case_name}_text = R\"mpc(\n{text})mpc\";\n\n"
        "}  // namespace gridsense::cases\n"
    )
    (OUT / f"{case_name}.hpp").write_text(header)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name in sys.argv[1:] or ["case14", "case30", "case57", "case118"]:
        export(name)
