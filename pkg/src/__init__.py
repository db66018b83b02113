"""hope-toolkit - 손-객체 자세 추정을 위한 데이터 준비, 평가 지표, 수치 커널"""

__version__ = "0.1.0"
