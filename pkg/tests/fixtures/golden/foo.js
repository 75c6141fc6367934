function foo(a) {
  var i = 4 * a;
  // call bar
  var tmp = bar(i);
  return tmp;
}
