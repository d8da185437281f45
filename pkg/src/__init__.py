"""Пакет оценки 6-DoF позы камеры по одному изображению-запросу."""
