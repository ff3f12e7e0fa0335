# -*- coding: utf-8 -*-
"""
공통 유틸리티 함수들 (출력 경로, 로그, 텍스트 정규화, HTTP 재시도, 결과 수집)
"""
import os
import re
import sys
import json
import time
from pathlib import Path

import numpy as np
import requests
from dotenv import load_dotenv

# .env 파일 로드
load_dotenv()


class ConfigError(Exception):
    """설정 오류 (CLI 종료 코드 1)"""


def get_output_dir(override=None):
    """실행 결과(트레이스, 리포트) 저장 경로 결정 및 생성"""
    if override:
        output_dir = str(override)
    elif os.getenv('SCOPEKG_OUTPUT_DIR'):
        output_dir = os.getenv('SCOPEKG_OUTPUT_DIR')
    elif os.getenv('GITHUB_ACTIONS'):
        # CI 환경에서는 임시 디렉토리 사용
        output_dir = "/tmp/scopekg_runs"
    else:
        output_dir = os.path.join(Path.home(), "Documents", "scopekg", "runs")

    os.makedirs(output_dir, exist_ok=True)
    return output_dir


def log(message):
    """진행 상황 출력 (stdout은 명령 결과 전용이므로 stderr 사용)"""
    print(message, file=sys.stderr, flush=True)


def normalize_text(text):
    """대소문자 무시 + 연속 공백 정리"""
    if text is None:
        return ""
    return re.sub(r'\s+', ' ', str(text)).strip().casefold()


def edit_distance(left, right):
    """Levenshtein 편집 거리"""
    if left == right:
        return 0
    if not left:
        return len(right)
    if not right:
        return len(left)

    previous = list(range(len(right) + 1))
    for i, lch in enumerate(left, start=1):
        current = [i]
        for j, rch in enumerate(right, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (lch != rch),
            ))
        previous = current
    return previous[-1]


def cosine_similarity(left, right):
    """코사인 유사도 (영벡터가 있으면 None)"""
    a = np.asarray(left, dtype=float)
    b = np.asarray(right, dtype=float)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        return None
    return float(np.dot(a, b) / (norm_a * norm_b))


def write_json(path, data):
    """JSON 파일 저장 (키 정렬 고정 - 동일 입력이면 동일 바이트)"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def post_json_with_retry(url, payload, api_key=None, timeout=30, max_retries=3):
    """JSON POST 호출 (지수적 백오프 재시도). 최종 실패 시 requests.RequestException 발생"""
    headers = {'Content-Type': 'application/json'}
    if api_key:
        headers['Authorization'] = f"Bearer {api_key}"

    last_error = None
    for attempt in range(max_retries):
        if attempt > 0:
            wait_time = 2 ** attempt  # 2초, 4초, 8초
            log(f"🔄 재시도 {attempt + 1}/{max_retries} (대기: {wait_time}초)")
            time.sleep(wait_time)

        try:
            response = requests.post(url, headers=headers, data=json.dumps(payload), timeout=timeout)
        except requests.RequestException as e:
            last_error = e
            log(f"❌ 시도 {attempt + 1} 실패: {e}")
            continue

        if response.status_code == 200:
            return response.json()

        last_error = requests.HTTPError(
            f"HTTP {response.status_code}: {response.text[:200]}", response=response
        )
        log(f"❌ API 호출 실패: {response.status_code}")

        # 인증/경로 오류는 재시도 불가
        if response.status_code in (401, 403, 404):
            log("❌ 복구 불가능한 오류 - 재시도 중단")
            break

    raise last_error if last_error else requests.RequestException(f"request failed: {url}")


class ProcessingResults:
    """파이프라인 처리 결과 수집 클래스"""

    def __init__(self, title="처리 결과"):
        self.title = title
        self.reset()

    def reset(self):
        """결과 초기화"""
        self.counts = {}
        self.errors = []
        self.warnings = []
        self.missing = []

    def add_count(self, name, count=1):
        """항목별 처리 수 추가"""
        self.counts[name] = self.counts.get(name, 0) + count

    def add_error(self, error_msg):
        """오류 추가"""
        self.errors.append(error_msg)

    def add_warning(self, warning_msg):
        """경고 추가"""
        self.warnings.append(warning_msg)

    def add_missing(self, entity, indicator, reason):
        """지표 누락 기록 (완전성 리포트용)"""
        self.missing.append({"entity": entity, "indicator": indicator, "reason": reason})

    def to_dict(self):
        return {
            "counts": dict(sorted(self.counts.items())),
            "errors": list(self.errors),
            "warnings": list(self.warnings),
            "missing": list(self.missing),
        }

    def get_summary(self):
        """처리 결과 요약 반환"""
        summary = [f"=== {self.title} 요약 ===", ""]
        if self.counts:
            summary.append("📊 처리 건수:")
            for name, count in sorted(self.counts.items()):
                summary.append(f"   • {name}: {count}")

        if self.missing:
            summary.append("")
            summary.append(f"⚠️ 누락 지표: {len(self.missing)}건")

        if self.errors:
            summary.append("")
            summary.append("❌ 오류 발생:")
            for error in self.errors:
                summary.append(f"   • {error}")

        if self.warnings:
            summary.append("")
            summary.append("⚠️ 주의사항:")
            for warning in self.warnings:
                summary.append(f"   • {warning}")

        if not self.errors and not self.warnings and not self.missing:
            summary.append("")
            summary.append("✅ 모든 처리가 성공적으로 완료되었습니다.")

        return "\n".join(summary)
