# web_dashboard.py
"""
JSON browser over the MSE reports written by `cli.py`.

    gunicorn web_dashboard:app
"""
import io
import logging
import os
from datetime import datetime

import pandas as pd
from flask import Flask, jsonify, request, send_file
from werkzeug.utils import secure_filename

from config import CSV_FLOAT_FORMAT, LOG_LEVEL, PORT, RESULTS_DIR
from errors import ConfigError, ModelCertificationError
from harness import REPORT_COLUMNS
from models import finite_model_from_dict
from oracle import certify

app = Flask(__name__)

# -----------------------
# BASIC CONFIG
# -----------------------
app.config["RESULTS_DIR"] = RESULTS_DIR
logger = logging.getLogger("sweepcv.web")

# Disable request logs
logging.getLogger("werkzeug").setLevel(logging.ERROR)

XLSX_MIME = "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"


# -----------------------
# ERROR HANDLERS
# -----------------------
@app.errorhandler(ConfigError)
def handle_config_error(exc):
    return jsonify({"error": str(exc)}), 400


@app.errorhandler(ModelCertificationError)
def handle_certification_error(exc):
    return jsonify({"error": str(exc)}), 422


@app.errorhandler(FileNotFoundError)
def handle_missing(exc):
    return jsonify({"error": str(exc)}), 404


# -----------------------
# FILE / DATA HELPERS
# -----------------------
def results_dir() -> str:
    path = app.config["RESULTS_DIR"]
    os.makedirs(path, exist_ok=True)
    return path


def report_path(name: str) -> str:
    safe = secure_filename(name)
    if not safe:
        raise ConfigError(f"invalid report name {name!r}")
    if not safe.endswith(".csv"):
        safe += ".csv"
    path = os.path.join(results_dir(), safe)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no report named {safe}")
    return path


def load_report(name: str, filters=None) -> pd.DataFrame:
    df = pd.read_csv(report_path(name))
    if filters:
        estimator = filters.get("estimator", "").strip()
        model = filters.get("model", "").strip()
        if estimator:
            df = df[df["estimator"] == estimator]
        if model:
            df = df[df["model"].str.contains(model, case=False, na=False, regex=False)]
    return df


def records(df: pd.DataFrame) -> list:
    # NaN is not valid JSON
    return df.astype(object).where(df.notna(), None).to_dict(orient="records")


def best_per_point(df: pd.DataFrame) -> pd.DataFrame:
    """Lowest-MSE row for each (model, param), with its MSE relative to rb."""
    keys = ["model", "param"]
    best = (df.sort_values("mse", kind="mergesort")
              .groupby(keys, dropna=False, sort=False).head(1)
              .sort_values(keys))
    rb = df.loc[df["estimator"] == "rb", keys + ["mse"]].rename(columns={"mse": "rb_mse"})
    best = best.merge(rb, on=keys, how="left")
    best["mse_ratio_to_rb"] = best["mse"] / best["rb_mse"]
    return best


# -----------------------
# API: reports
# -----------------------
@app.route("/api/reports")
def api_reports():
    names = sorted(f for f in os.listdir(results_dir()) if f.endswith(".csv"))
    return jsonify({"reports": names})


@app.route("/api/reports/<name>")
def api_report(name):
    filters = {
        "estimator": request.args.get("estimator", ""),
        "model": request.args.get("model", ""),
    }
    df = load_report(name, filters)
    return jsonify({"report": name, "rows": records(df), "total_rows": len(df)})


@app.route("/api/reports/<name>/summary")
def api_report_summary(name):
    return jsonify({"report": name, "best": records(best_per_point(load_report(name)))})


# -----------------------
# EXPORT: EXCEL
# -----------------------
@app.route("/export/excel/<name>")
def export_excel(name):
    df = load_report(name, {"estimator": request.args.get("estimator", ""),
                            "model": request.args.get("model", "")})
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        df.to_excel(writer, index=False, sheet_name="MSE")
    output.seek(0)
    stem = os.path.splitext(secure_filename(name))[0]
    fname = f"{stem}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.xlsx"
    return send_file(output, as_attachment=True, download_name=fname, mimetype=XLSX_MIME)


# -----------------------
# UPLOAD
# -----------------------
@app.route("/upload", methods=["POST"])
def upload_report():
    file = request.files.get("file")
    if not file or file.filename == "":
        raise ConfigError("please select a file")
    fname = file.filename.lower()
    try:
        if fname.endswith(".xlsx"):
            df = pd.read_excel(file.stream, engine="openpyxl")
        else:
            df = pd.read_csv(file.stream)
    except Exception as exc:
        logger.exception("upload of %s failed", file.filename)
        raise ConfigError(f"cannot parse {file.filename}: {exc}") from exc
    missing = [c for c in REPORT_COLUMNS if c not in df.columns]
    if missing:
        raise ConfigError(f"report lacks columns {missing}")
    stem = os.path.splitext(secure_filename(file.filename))[0] or "report"
    target = os.path.join(results_dir(), f"{stem}.csv")
    df[REPORT_COLUMNS].to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("stored uploaded report %s (%d rows)", target, len(df))
    return jsonify({"stored": os.path.basename(target), "rows": len(df)}), 201


# -----------------------
# API: exact oracle
# -----------------------
@app.route("/api/oracle", methods=["POST"])
def api_oracle():
    doc = request.get_json(silent=True)
    if not isinstance(doc, dict):
        raise ConfigError("expected a finite-model JSON object")
    model = finite_model_from_dict(doc)
    return jsonify(certify(model).to_dict())


# -----------------------
# START SERVER
# -----------------------
if __name__ == "__main__":
    logging.basicConfig(level=LOG_LEVEL)
    app.run(host="0.0.0.0", port=PORT, debug=False)
