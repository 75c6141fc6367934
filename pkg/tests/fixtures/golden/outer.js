function outer(list) {
  // keep only valid items
  var valid = list.filter(function (x) {
    return x != null;
  });
  return valid.length;
}
