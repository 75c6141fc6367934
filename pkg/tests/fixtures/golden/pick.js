const pick = (a, b) => {
  const v = a || b;
  return v ? (v > 0 ? v : -v) : 0;
};
